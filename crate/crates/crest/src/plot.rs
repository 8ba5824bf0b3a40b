//! Static SVG charts rendered from a metrics CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Test recall per class, one bar per generation.
    PerClassBars,
    /// Test recall of every class and the mean, across generations.
    RecallOverGenerations,
}

impl PlotKind {
    pub fn file_name(&self) -> &'static str {
        match self {
            PlotKind::PerClassBars => "per_class_bars.svg",
            PlotKind::RecallOverGenerations => "recall_over_generations.svg",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_class_bars" => Ok(PlotKind::PerClassBars),
            "recall_over_generations" => Ok(PlotKind::RecallOverGenerations),
            other => Err(format!(
                "unknown plot kind `{other}` (expected per_class_bars or recall_over_generations)"
            )),
        }
    }
}

const REQUIRED: [&str; 4] = ["generation", "class", "recall", "split"];

/// Test-split recall table: `recall[generation][class]`, plus the mean row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecallTable {
    pub per_class: BTreeMap<usize, BTreeMap<usize, f64>>,
    pub mean: BTreeMap<usize, f64>,
}

pub fn parse_metrics(text: &str, path: &Path) -> Result<RecallTable> {
    let err = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    let mut col = BTreeMap::new();
    for name in REQUIRED {
        let idx = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(format!("missing column `{name}`")))?;
        col.insert(name, idx);
    }
    let mut table = RecallTable::default();
    for record in reader.records() {
        let record = record.map_err(|e| err(e.to_string()))?;
        if &record[col["split"]] != "test" {
            continue;
        }
        let lineno = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| err(format!("line {lineno}: malformed {what}"));
        let generation: usize = record[col["generation"]].parse().map_err(|_| bad("generation"))?;
        let recall: f64 = record[col["recall"]].parse().map_err(|_| bad("recall"))?;
        match &record[col["class"]] {
            "mean" => {
                table.mean.insert(generation, recall);
            }
            c => {
                let class: usize = c.parse().map_err(|_| bad("class"))?;
                table.per_class.entry(generation).or_default().insert(class, recall);
            }
        }
    }
    Ok(table)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    )
    .unwrap();
    // Axes and recall gridlines at 0, 0.25, .., 1.
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = y_of(v);
        writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    s
}

fn y_of(v: f64) -> f64 {
    HEIGHT - MARGIN - v.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN)
}

fn per_class_bars(table: &RecallTable) -> String {
    let mut s = svg_open("Test recall per class");
    let classes: Vec<usize> = table
        .per_class
        .values()
        .flat_map(|m| m.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let gens: Vec<usize> = table.per_class.keys().copied().collect();
    let group = (WIDTH - 2.0 * MARGIN) / classes.len().max(1) as f64;
    let bar = group * 0.8 / gens.len().max(1) as f64;
    for (ci, class) in classes.iter().enumerate() {
        let x0 = MARGIN + ci as f64 * group + group * 0.1;
        for (gi, g) in gens.iter().enumerate() {
            let v = table.per_class[g].get(class).copied().unwrap_or(0.0);
            let y = y_of(v);
            writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + gi as f64 * bar,
                y_of(0.0) - y,
                PALETTE[gi % PALETTE.len()]
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{class}</text>"#,
            x0 + group * 0.4,
            HEIGHT - MARGIN + 16.0
        )
        .unwrap();
    }
    legend(&mut s, gens.iter().map(|g| format!("gen {g}")));
    s.push_str("</svg>\n");
    s
}

fn recall_over_generations(table: &RecallTable) -> String {
    let mut s = svg_open("Test recall over generations");
    let gens: Vec<usize> = table.per_class.keys().copied().collect();
    let span = (gens.len().max(2) - 1) as f64;
    let x_of = |i: usize| MARGIN + i as f64 * (WIDTH - 2.0 * MARGIN) / span;
    let mut series: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, g) in gens.iter().enumerate() {
        for (&c, &v) in &table.per_class[g] {
            series.entry(c).or_default().push((i, v));
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{g}</text>"#,
            x_of(i),
            HEIGHT - MARGIN + 16.0
        )
        .unwrap();
    }
    let polyline = |pts: &[(usize, f64)], color: &str, width: f64| {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(i, v)| format!("{:.2},{:.2}", x_of(i), y_of(v)))
            .collect();
        format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            coords.join(" ")
        )
    };
    for (k, pts) in series.values().enumerate() {
        writeln!(s, "{}", polyline(pts, PALETTE[k % PALETTE.len()], 1.0)).unwrap();
    }
    let mean: Vec<(usize, f64)> = gens
        .iter()
        .enumerate()
        .filter_map(|(i, g)| table.mean.get(g).map(|&v| (i, v)))
        .collect();
    writeln!(s, "{}", polyline(&mean, "black", 3.0)).unwrap();
    let mut names: Vec<String> = series.keys().map(|c| format!("class {c}")).collect();
    names.push("mean".into());
    legend(&mut s, names.into_iter());
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, names: impl Iterator<Item = String>) {
    for (i, name) in names.enumerate() {
        let y = 34.0 + i as f64 * 12.0;
        let color = if name == "mean" {
            "black"
        } else {
            PALETTE[i % PALETTE.len()]
        };
        writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            WIDTH - MARGIN - 60.0,
            y - 8.0,
            WIDTH - MARGIN - 48.0,
            y
        )
        .unwrap();
    }
}

pub fn render(kind: PlotKind, table: &RecallTable) -> String {
    match kind {
        PlotKind::PerClassBars => per_class_bars(table),
        PlotKind::RecallOverGenerations => recall_over_generations(table),
    }
}

/// Renders each requested chart into `out_dir`; returns the written paths.
pub fn plot_file(csv: &Path, kinds: &[PlotKind], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(csv).map_err(|e| CliError::io(csv, e))?;
    let table = parse_metrics(&text, csv)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();
    for kind in kinds {
        let path = out_dir.join(kind.file_name());
        fs::write(&path, render(*kind, &table)).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
