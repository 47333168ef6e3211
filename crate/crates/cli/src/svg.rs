//! Heatmap figures as SVG: attention (steps x frames) and indicator
//! posteriorgrams (features x steps) with optional ground-truth markers.

use std::fmt::Write as _;

use afd_core::binio::F32Matrix;

const CELL: usize = 12;
const LEFT: usize = 110;
const TOP: usize = 24;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Darker is larger: value 1 renders black, 0 white.
fn gray(v: f32) -> u8 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (255.0 * (1.0 - v)).round() as u8
}

fn open(width: usize, height: usize, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="10">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    s
}

fn cell(s: &mut String, x: usize, y: usize, v: f32) {
    let g = gray(v);
    let _ = writeln!(
        s,
        r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"><title>{v:.4}</title></rect>"#
    );
}

fn label(s: &mut String, y: usize, text: &str) {
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
        LEFT - 4,
        y + CELL - 2,
        escape(text)
    );
}

/// Decoder steps top to bottom, encoder frames left to right.
pub fn attention_svg(m: &F32Matrix, row_labels: &[String]) -> String {
    let width = LEFT + m.cols * CELL + 8;
    let height = TOP + m.rows * CELL + 8;
    let mut s = open(width, height, "attention");
    let _ = writeln!(s, r#"<text x="{LEFT}" y="14">encoder frame</text>"#);
    for r in 0..m.rows {
        let y = TOP + r * CELL;
        label(&mut s, y, row_labels.get(r).map_or("", String::as_str));
        for (c, &v) in m.row(r).iter().enumerate() {
            cell(&mut s, LEFT + c * CELL, y, v);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One row per feature, one column per decoder step. `truth[k][i]` marks
/// feature `i` as active at step `k` with a circle.
pub fn posteriorgram_svg(m: &F32Matrix, feature_names: &[String], truth: Option<&[Vec<bool>]>) -> String {
    let width = LEFT + m.rows * CELL + 8;
    let height = TOP + m.cols * CELL + 8;
    let mut s = open(width, height, "indicator posteriorgram");
    let _ = writeln!(s, r#"<text x="{LEFT}" y="14">decoder step</text>"#);
    for f in 0..m.cols {
        let y = TOP + f * CELL;
        label(&mut s, y, feature_names.get(f).map_or("", String::as_str));
        for k in 0..m.rows {
            cell(&mut s, LEFT + k * CELL, y, m.row(k)[f]);
        }
    }
    if let Some(truth) = truth {
        for (k, bits) in truth.iter().enumerate().take(m.rows) {
            for (f, _) in bits.iter().enumerate().take(m.cols).filter(|(_, &b)| b) {
                let _ = writeln!(
                    s,
                    r#"<circle class="truth" cx="{}" cy="{}" r="3" fill="none" stroke="red" stroke-width="1.5"/>"#,
                    LEFT + k * CELL + CELL / 2,
                    TOP + f * CELL + CELL / 2
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
