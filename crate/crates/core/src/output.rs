//! CSV tables, self-contained SVG line plots, and the output manifest.
//!
//! CSV conventions: comma separator, `.` decimal point, one header row,
//! comment lines prefixed `#`. Floats print in shortest round-trip form so
//! identical runs produce byte-identical files. Every artifact a run
//! writes is listed in `manifest.txt` with its SHA-256 hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Shortest round-trip decimal form of a float.
pub fn fnum(x: f64) -> String {
    format!("{x}")
}

/// A CSV table under construction.
pub struct Table {
    comments: Vec<String>,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            comments: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) -> &mut Self {
        let cells: Vec<String> = cells.into_iter().map(Into::into).collect();
        assert_eq!(cells.len(), self.header.len(), "row width differs from header");
        self.rows.push(cells);
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_csv().as_bytes())
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir.display().to_string(), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::file(path.display().to_string(), e))
}

/// One plotted curve; nonpositive values are dropped on log axes.
pub struct Curve {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

pub struct PlotSpec {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub logx: bool,
    pub logy: bool,
    pub curves: Vec<Curve>,
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];
const W: f64 = 880.0;
const H: f64 = 560.0;
const ML: f64 = 80.0;
const MR: f64 = 200.0;
const MT: f64 = 48.0;
const MB: f64 = 64.0;

fn axis_ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    if log {
        let a = lo.ceil() as i64;
        let b = hi.floor() as i64;
        let mut t: Vec<(f64, String)> = (a..=b).map(|e| (e as f64, format!("1e{e}"))).collect();
        if t.is_empty() {
            t.push((lo, format!("1e{lo:.1}")));
            t.push((hi, format!("1e{hi:.1}")));
        }
        t
    } else {
        (0..=4)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / 4.0;
                (v, format!("{v:.3}"))
            })
            .collect()
    }
}

/// Writes a line plot as a standalone SVG file.
pub fn write_svg(path: &Path, spec: &PlotSpec) -> Result<()> {
    let tx = |v: f64| if spec.logx { v.log10() } else { v };
    let ty = |v: f64| if spec.logy { v.log10() } else { v };
    let mut pts: Vec<Vec<(f64, f64)>> = Vec::new();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &spec.curves {
        let mut p = Vec::new();
        for (&x, &y) in c.xs.iter().zip(&c.ys) {
            if (spec.logx && x <= 0.0) || (spec.logy && y <= 0.0) {
                continue;
            }
            let (u, v) = (tx(x), ty(y));
            if !u.is_finite() || !v.is_finite() {
                continue;
            }
            x0 = x0.min(u);
            x1 = x1.max(u);
            y0 = y0.min(v);
            y1 = y1.max(v);
            p.push((u, v));
        }
        pts.push(p);
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(Error::InvalidArgument(format!("plot {:?} has no drawable points", spec.title)));
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let padx = 0.04 * (x1 - x0);
    let pady = 0.06 * (y1 - y0);
    let (x0, x1, y0, y1) = (x0 - padx, x1 + padx, y0 - pady, y1 + pady);
    let px = |u: f64| ML + (u - x0) / (x1 - x0) * (W - ML - MR);
    let py = |v: f64| H - MB - (v - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"13\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>",
        W - ML - MR,
        H - MT - MB
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        ML + (W - ML - MR) / 2.0,
        MT - 16.0,
        xml_escape(&spec.title)
    );
    for (v, label) in axis_ticks(x0, x1, spec.logx) {
        let x = px(v);
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#ccc\"/>",
            MT,
            H - MB
        );
        let _ = writeln!(
            s,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>",
            H - MB + 18.0
        );
    }
    for (v, label) in axis_ticks(y0, y1, spec.logy) {
        let y = py(v);
        let _ = writeln!(
            s,
            "<line x1=\"{ML}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ccc\"/>",
            W - MR
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{label}</text>",
            ML - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        ML + (W - ML - MR) / 2.0,
        H - 16.0,
        xml_escape(&spec.xlabel)
    );
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">{}</text>",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        xml_escape(&spec.ylabel)
    );
    for (i, (c, p)) in spec.curves.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !p.is_empty() {
            let mut poly = String::new();
            for &(u, v) in p {
                let _ = write!(poly, "{:.2},{:.2} ", px(u), py(v));
            }
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
                poly.trim_end()
            );
        }
        let ly = MT + 18.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            W - MR + 12.0,
            W - MR + 40.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            W - MR + 46.0,
            ly + 4.0,
            xml_escape(&c.label)
        );
    }
    let _ = writeln!(s, "</svg>");
    write_bytes(path, s.as_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Collects run metadata and per-file hashes; written last as
/// `manifest.txt` in the output directory.
pub struct Manifest {
    meta: Vec<(String, String)>,
    files: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest { meta: Vec::new(), files: Vec::new() }
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.meta.push((key.into(), value.into()));
        self
    }

    /// Hashes a written artifact and records it under `name`.
    pub fn file(&mut self, path: &Path, name: &str) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::file(path.display().to_string(), e))?;
        self.files.push((name.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut s = String::from("# run manifest\n");
        for (k, v) in &self.meta {
            for (i, line) in v.lines().enumerate() {
                if i == 0 {
                    let _ = writeln!(s, "# {k}: {line}");
                } else {
                    let _ = writeln!(s, "#   {line}");
                }
            }
        }
        for (name, hash) in &self.files {
            let _ = writeln!(s, "{hash}  {name}");
        }
        let path = dir.join("manifest.txt");
        write_bytes(&path, s.as_bytes())?;
        Ok(path)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-12, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fnum(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fnum(0.5), "0.5");
    }

    #[test]
    fn csv_output_is_deterministic() {
        let build = || {
            let mut t = Table::new(["k", "value"]);
            t.comment("gamma: 0.1");
            t.row([fnum(1.0), fnum(1.0 / 3.0)]);
            t.row([fnum(2.0), fnum(2.0 / 3.0)]);
            t.to_csv()
        };
        let a = build();
        assert_eq!(a, build());
        assert!(a.starts_with("# gamma: 0.1\nk,value\n"));
        assert_eq!(a.lines().count(), 4);
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn svg_plot_skips_nonpositive_points_on_log_axes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let spec = PlotSpec {
            title: "t".into(),
            xlabel: "x".into(),
            ylabel: "y".into(),
            logx: true,
            logy: true,
            curves: vec![Curve {
                label: "c".into(),
                xs: vec![1.0, 10.0, 100.0],
                ys: vec![1.0, 0.0, 0.01],
            }],
        };
        write_svg(&path, &spec).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.contains("<polyline"));
        // Two surviving points means exactly two coordinate pairs.
        let poly = body.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(poly.split_whitespace().count(), 2);
    }

    #[test]
    fn manifest_lists_every_recorded_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        std::fs::write(&f, "x\n1\n").unwrap();
        let mut m = Manifest::new();
        m.meta("seed", "42");
        m.file(&f, "a.csv").unwrap();
        let mp = m.write(dir.path()).unwrap();
        let body = std::fs::read_to_string(mp).unwrap();
        assert!(body.contains("# seed: 42"));
        assert!(body.contains("  a.csv"));
        assert!(body.contains(&sha256_hex(b"x\n1\n")));
    }
}
