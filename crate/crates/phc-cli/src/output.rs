use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use phasecascade::direct::{Curve, ExperimentReport};

/// Artifact directory of one run.
pub struct Out {
    pub dir: PathBuf,
}

impl Out {
    pub fn create(dir: &Path) -> Result<Out> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Out { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(p)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    }

    /// CSV with a header row; floats use the shortest round-trip form.
    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two whitespace-separated columns with a commented header.
    pub fn plot(&self, name: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64]) -> Result<()> {
        let mut s = format!("# {x_label} {y_label}\n");
        for (a, b) in x.iter().zip(y) {
            let _ = writeln!(s, "{a:e} {b:e}");
        }
        self.text(&format!("plot_{}.dat", sanitize(name)), &s)
    }

    pub fn experiment(&self, report: &ExperimentReport, extra: &[(String, String)]) -> Result<()> {
        let mut m = Manifest::new();
        for (k, v) in extra {
            m.push(k, v);
        }
        let mut body = m.render();
        body.push_str(&report.manifest());
        self.text("manifest.txt", &body)?;
        let rows: Vec<Vec<String>> = report.curves.iter().flat_map(|c| curve_rows(c, &report.eps)).collect();
        self.csv("curves.csv", &["epsilon", "t", "norm_name", "value"], &rows)?;
        for c in &report.curves {
            self.plot(&c.name, &c.x_label, &c.y_label, &c.x, &c.y)?;
        }
        Ok(())
    }
}

/// Shortest round-trip form, exponent notation away from unit scale.
pub fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && (v.abs() < 1e-3 || v.abs() >= 1e7) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Curves over ε or t fill those columns; other abscissae are folded into
/// the norm name as `curve@label=x`.
fn curve_rows(c: &Curve, eps: &[f64]) -> Vec<Vec<String>> {
    let single_eps = if eps.len() == 1 { num(eps[0]) } else { String::new() };
    c.x.iter()
        .zip(&c.y)
        .map(|(&x, &y)| match c.x_label.as_str() {
            "epsilon" => vec![num(x), String::new(), c.name.clone(), num(y)],
            "t" => vec![single_eps.clone(), num(x), c.name.clone(), num(y)],
            other => vec![single_eps.clone(), String::new(), format!("{}@{}={}", c.name, other, num(x)), num(y)],
        })
        .collect()
}

/// key = value lines in insertion order.
#[derive(Default)]
pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn block(&mut self, prefix: &str, text: &str) -> &mut Self {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match line.split_once(" = ") {
                Some((k, v)) => self.push(&format!("{prefix}.{}", k.trim()), v.trim()),
                None => self.push(prefix, line.trim()),
            };
        }
        self
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
