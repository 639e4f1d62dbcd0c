//! CSV tables and SVG plots.

use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_float(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// One observable: a named table with fixed columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            for line in h.lines() {
                let _ = writeln!(s, "# {line}");
            }
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    /// Line plot of every numeric column against the first.
    pub fn to_svg(&self) -> Option<String> {
        let xs: Vec<f64> = self.rows.iter().map(|r| r[0].as_f64()).collect::<Option<_>>()?;
        if xs.len() < 2 {
            return None;
        }
        let series: Vec<(&str, Vec<f64>)> = (1..self.columns.len())
            .filter_map(|c| {
                let ys: Option<Vec<f64>> = self.rows.iter().map(|r| r[c].as_f64().filter(|y| y.is_finite())).collect();
                ys.map(|ys| (self.columns[c].as_str(), ys))
            })
            .collect();
        if series.is_empty() {
            return None;
        }
        let (w, h, m) = (640.0, 400.0, 50.0);
        let range = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) }
        };
        let (x0, x1) = range(&mut xs.iter().copied());
        let (y0, y1) = range(&mut series.iter().flat_map(|s| s.1.iter().copied()));
        let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(s, r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * m, h - 2.0 * m);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, self.columns[0]);
        let _ = writeln!(s, r#"<text x="{m}" y="{}">{:.4e}</text>"#, h - m + 14.0, x0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4e}</text>"#, w - m, h - m + 14.0, x1);
        let _ = writeln!(s, r#"<text x="4" y="{}">{:.4e}</text>"#, h - m, y0);
        let _ = writeln!(s, r#"<text x="4" y="{}">{:.4e}</text>"#, m, y1);
        for (k, (name, ys)) in series.iter().enumerate() {
            let c = colors[k % colors.len()];
            let pts: Vec<String> = xs.iter().zip(ys).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" points="{}"/>"#, pts.join(" "));
            let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#, m + 8.0, m + 14.0 * (k as f64 + 1.0));
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_17_digits() {
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
        assert_eq!(format_float(-0.1), "-1.0000000000000001e-1");
        let x = 3f64.sqrt();
        assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new("t", &["p", "ratio"]);
        t.push(vec![1usize.into(), 1.0.into()]);
        let csv = t.to_csv(&["a\nb".into()]);
        assert_eq!(csv, "# a\n# b\np,ratio\n1,1.0000000000000000e0\n");
        assert!(t.to_svg().is_none());
        t.push(vec![2usize.into(), 2.0.into()]);
        assert!(t.to_svg().unwrap().contains("polyline"));
    }
}
