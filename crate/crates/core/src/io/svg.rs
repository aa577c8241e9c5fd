//! Dependency-free SVG heatmap of a transfer matrix: one rect per cell,
//! darker fill for higher adversarial accuracy.

use crate::error::Result;
use crate::transfer::TransferMatrix;
use std::path::Path;

const CELL: usize = 56;
const LEFT: usize = 96;
const TOP: usize = 64;

fn cell_fill(v: f64) -> String {
    // 0 -> white, 1 -> near black.
    let level = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
    format!("rgb({level},{level},{level})")
}

fn text_fill(v: f64) -> &'static str {
    if v > 0.55 {
        "#ffffff"
    } else {
        "#000000"
    }
}


pub fn render(m: &TransferMatrix) -> String {
    let cols = m.col_labels.len();
    let rows = m.row_labels.len();
    let width = LEFT + cols * CELL + 16;
    let height = TOP + rows * CELL + 16;
    let mut svg = format!(
        r#"<svg version="1.1" width="{width}" height="{height}" xmlns="http://www.w3.org/2000/svg">"#
    );
    svg.push('\n');
    svg.push_str(&format!(
        r#"<text x="{LEFT}" y="20" font-family="monospace" font-size="14">adversarial accuracy (darker = higher = less transferable)</text>"#
    ));
    svg.push('\n');
    for (c, label) in m.col_labels.iter().enumerate() {
        let x = LEFT + c * CELL + CELL / 2;
        svg.push_str(&format!(
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{label}</text>"#,
            TOP - 10
        ));
        svg.push('\n');
    }
    for (r, row_label) in m.row_labels.iter().enumerate() {
        let y = TOP + r * CELL + CELL / 2;
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle" font-family="monospace" font-size="12">{row_label}</text>"#,
            LEFT - 8,
            y + 4
        ));
        svg.push('\n');
        for (c, &v) in m.cells[r].iter().enumerate() {
            let x = LEFT + c * CELL;
            let y = TOP + r * CELL;
            svg.push_str(&format!(
                r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#888"/>"##,
                cell_fill(v)
            ));
            svg.push('\n');
            svg.push_str(&format!(
                r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12" fill="{}">{v:.3}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4,
                text_fill(v)
            ));
            svg.push('\n');
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn save(m: &TransferMatrix, path: &Path) -> Result<()> {
    super::atomic_write(path, render(m).as_bytes())
}
