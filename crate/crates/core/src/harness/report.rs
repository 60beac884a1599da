//! Result aggregation and table rendering.

use crate::error::{Error, Result};

/// Accuracies as fractions; rendered as percentages.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    Some(var.sqrt())
}

/// `mean (±std)` in percent, two decimals; std omitted for a single seed.
pub fn format_mean_std(accuracies: &[f64]) -> Result<String> {
    if accuracies.is_empty() {
        return Err(Error::Config("no accuracies to report".into()));
    }
    let pct: Vec<f64> = accuracies.iter().map(|a| a * 100.0).collect();
    let m = mean(&pct);
    Ok(match sample_std(&pct) {
        Some(s) => format!("{m:.2} (±{s:.2})"),
        None => format!("{m:.2}"),
    })
}

/// One aggregated row of a result table.
#[derive(Debug, Clone)]
pub struct ReportRow {
    /// Rows sharing a group are comparable; the best in each group is
    /// flagged.
    pub group: String,
    pub label: String,
    pub dev: Vec<f64>,
    pub test: Vec<f64>,
    pub failed: bool,
}

/// Plain-text table: one line per row, best test mean in each group starred.
pub fn render_table(rows: &[ReportRow]) -> Result<String> {
    let mut out = String::new();
    out.push_str("# accuracy as percent, mean (±sample std, n-1) over seeds; * = best in group\n");
    let group_width = rows.iter().map(|r| r.group.len()).max().unwrap_or(0).max(5);
    let label_width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut best: std::collections::HashMap<&str, f64> = std::collections::HashMap::new();
    for r in rows.iter().filter(|r| !r.failed) {
        let m = mean(&r.test);
        let e = best.entry(r.group.as_str()).or_insert(f64::NEG_INFINITY);
        if m > *e {
            *e = m;
        }
    }
    let mut last_group = None;
    for r in rows {
        if last_group.is_some_and(|g: &str| g != r.group.as_str()) {
            out.push_str(&format!("{}\n", "-".repeat(group_width + label_width + 42)));
        }
        last_group = Some(r.group.as_str());
        if r.failed {
            out.push_str(&format!(
                "{:<group_width$}  {:<label_width$}  FAILED\n",
                r.group, r.label
            ));
            continue;
        }
        let star = if best
            .get(r.group.as_str())
            .is_some_and(|&b| (mean(&r.test) - b).abs() < 1e-12)
        {
            "*"
        } else {
            " "
        };
        out.push_str(&format!(
            "{:<group_width$}  {:<label_width$}  dev {:<16} test {:<16}{star}\n",
            r.group,
            r.label,
            format_mean_std(&r.dev)?,
            format_mean_std(&r.test)?,
        ));
    }
    Ok(out)
}

/// Machine-readable rows: `group,label,seed,dev_acc,test_acc`, one line per
/// seed, `FAILED` rows marked in the seed column.
pub fn render_csv(rows: &[ReportRow], seeds: &[u64]) -> String {
    let mut out = String::from("group,label,seed,dev_acc,test_acc\n");
    for r in rows {
        if r.failed {
            out.push_str(&format!("{},{},FAILED,,\n", r.group, r.label));
            continue;
        }
        for (i, &seed) in seeds.iter().enumerate().take(r.dev.len()) {
            out.push_str(&format!(
                "{},{},{seed},{:.6},{:.6}\n",
                r.group, r.label, r.dev[i], r.test[i]
            ));
        }
    }
    out
}

/// Parse rows written by [`render_csv`] back into aggregated form.
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rows: Vec<ReportRow> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "results line {}: expected 5 fields",
                lineno + 1
            )));
        }
        let (group, label) = (fields[0], fields[1]);
        let row = match rows
            .iter_mut()
            .find(|r| r.group == group && r.label == label)
        {
            Some(r) => r,
            None => {
                rows.push(ReportRow {
                    group: group.to_string(),
                    label: label.to_string(),
                    dev: Vec::new(),
                    test: Vec::new(),
                    failed: false,
                });
                rows.last_mut().expect("just pushed")
            }
        };
        if fields[2] == "FAILED" {
            row.failed = true;
            continue;
        }
        let dev: f64 = fields[3]
            .parse()
            .map_err(|_| Error::Parse(format!("bad dev accuracy {:?}", fields[3])))?;
        let test: f64 = fields[4]
            .parse()
            .map_err(|_| Error::Parse(format!("bad test accuracy {:?}", fields[4])))?;
        row.dev.push(dev);
        row.test.push(test);
    }
    Ok(rows)
}
