//! Minimal SVG plotting: a closed or open polyline in a fixed viewport.

use std::path::Path;

pub fn write_polyline(
    path: &Path,
    points: &[(f64, f64)],
    title: &str,
) -> std::io::Result<()> {
    let (w, h) = (640.0, 640.0);
    let margin = 40.0;
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let span_x = (xmax - xmin).max(1e-12);
    let span_y = (ymax - ymin).max(1e-12);
    let scale = ((w - 2.0 * margin) / span_x).min((h - 2.0 * margin) / span_y);
    let map = |x: f64, y: f64| -> (f64, f64) {
        (
            margin + (x - xmin) * scale,
            h - margin - (y - ymin) * scale,
        )
    };
    let mut body = String::new();
    body.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    body.push_str(&format!(
        "<title>{}</title>\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
        title
    ));
    body.push_str("<polyline fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"1.5\" points=\"");
    for &(x, y) in points {
        let (sx, sy) = map(x, y);
        body.push_str(&format!("{sx:.2},{sy:.2} "));
    }
    body.push_str("\"/>\n</svg>\n");
    std::fs::write(path, body)
}
