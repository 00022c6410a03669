//! Display rounding and plain-text table layout.

/// Rounds to `decimals` and drops the sign of a rounded zero. Undefined
/// values print as "n/a".
pub fn fixed(x: f64, decimals: usize) -> String {
    if !x.is_finite() {
        return "n/a".to_string();
    }
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Three decimals, for means and standard deviations.
pub fn fmt3(x: f64) -> String {
    fixed(x, 3)
}

/// Three decimals with an explicit sign, for changes and coefficients.
/// A value that rounds to zero prints unsigned.
pub fn signed3(x: f64) -> String {
    let s = fixed(x, 3);
    if s.starts_with('-') || s == "n/a" || s.chars().all(|c| c == '0' || c == '.') {
        s
    } else {
        format!("+{s}")
    }
}

pub fn fmt_t(t: Option<f64>) -> String {
    t.map_or_else(|| "n/a".to_string(), |t| fixed(t, 2))
}

fn two_sig_decimals(p: f64) -> usize {
    let mag = p.log10().floor() as i64;
    (1 - mag).max(2) as usize
}

/// Two decimals, or two significant figures below 0.1, floored at "<.001".
pub fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => "n/a".to_string(),
        Some(p) if p < 0.001 => "<.001".to_string(),
        Some(p) if p < 0.1 => fixed(p, two_sig_decimals(p)),
        Some(p) => fixed(p, 2),
    }
}

/// Three decimals, floored at "<.001".
pub fn fmt_p3(p: Option<f64>) -> String {
    match p {
        None => "n/a".to_string(),
        Some(p) if p < 0.001 => "<.001".to_string(),
        Some(p) => fixed(p, 3),
    }
}

/// Like [`fmt_p`] without the leading zero (".48").
pub fn fmt_p_bare(p: Option<f64>) -> String {
    let s = fmt_p(p);
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

/// Integer with comma thousands separators.
pub fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Full-precision number for CSV output; empty for missing or undefined
/// values.
pub fn csv_num(x: Option<f64>) -> String {
    x.filter(|v| v.is_finite()).map_or_else(String::new, |v| format!("{v}"))
}

/// Column-aligned text table. The first `left_cols` columns are left
/// aligned, the rest right aligned.
#[derive(Debug, Clone)]
pub struct TextTable {
    pub title: String,
    pub header: Vec<Vec<String>>,
    pub rows: Vec<Vec<String>>,
    pub left_cols: usize,
    pub note: Option<String>,
}

impl TextTable {
    pub fn render(&self) -> String {
        let ncol = self
            .header
            .iter()
            .chain(&self.rows)
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let mut width = vec![0usize; ncol];
        for row in self.header.iter().chain(&self.rows) {
            // Single-cell rows are section labels and span the table.
            if row.len() == 1 && ncol > 1 {
                continue;
            }
            for (i, cell) in row.iter().enumerate() {
                width[i] = width[i].max(cell.chars().count());
            }
        }
        let total: usize = width.iter().sum::<usize>() + 2 * ncol.saturating_sub(1);
        let rule = "-".repeat(total);
        let line = |row: &Vec<String>| -> String {
            if row.len() == 1 && ncol > 1 {
                return row[0].clone();
            }
            let mut s = String::new();
            for (i, w) in width.iter().enumerate() {
                let cell = row.get(i).map(String::as_str).unwrap_or("");
                let pad = w - cell.chars().count();
                if i > 0 {
                    s.push_str("  ");
                }
                if i < self.left_cols {
                    s.push_str(cell);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str(&" ".repeat(pad));
                    s.push_str(cell);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        out.push_str(&self.title);
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for h in &self.header {
            out.push_str(&line(h));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        if let Some(note) = &self.note {
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_values_follow_table_convention() {
        assert_eq!(fmt_p(Some(0.0171)), "0.017");
        assert_eq!(fmt_p(Some(0.182)), "0.18");
        assert_eq!(fmt_p(Some(0.7171)), "0.72");
        assert_eq!(fmt_p(Some(0.0004)), "<.001");
        assert_eq!(fmt_p(Some(0.0012)), "0.0012");
        assert_eq!(fmt_p3(Some(0.1823)), "0.182");
        assert_eq!(fmt_p_bare(Some(0.48)), ".48");
        assert_eq!(fmt_p_bare(Some(0.0000001)), "<.001");
        assert_eq!(fmt_p(None), "n/a");
    }

    #[test]
    fn signs_and_rounding() {
        assert_eq!(signed3(0.008), "+0.008");
        assert_eq!(signed3(-0.0204), "-0.020");
        assert_eq!(signed3(-0.0001), "0.000");
        assert_eq!(fmt3(-0.0002), "0.000");
        assert_eq!(fmt_t(Some(-0.364)), "-0.36");
        assert_eq!(thousands(1818), "1,818");
        assert_eq!(thousands(202), "202");
        assert_eq!(thousands(1234567), "1,234,567");
        assert_eq!(fmt3(f64::NAN), "n/a");
        assert_eq!(signed3(f64::NAN), "n/a");
        assert_eq!(csv_num(Some(f64::NAN)), "");
    }

    #[test]
    fn table_alignment() {
        let t = TextTable {
            title: "T".into(),
            header: vec![vec!["a".into(), "bb".into()]],
            rows: vec![vec!["long".into(), "1".into()], vec!["Section".into()]],
            left_cols: 1,
            note: None,
        };
        let s = t.render();
        assert!(s.contains("long   1\n"));
        assert!(s.contains("a     bb\n"));
        assert!(s.contains("\nSection\n"));
    }
}
