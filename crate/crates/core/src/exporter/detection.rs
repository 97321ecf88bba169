use crate::error::{Error, Result};
use crate::face_pipeline::MouthBox;

/// One darknet-style line: `<class> <cx> <cy> <w> <h>`, normalized by the
/// frame size, six decimals, no trailing newline.
pub fn format_label_line(class: usize, bbox: &MouthBox, frame_w: u32, frame_h: u32) -> String {
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    let cx = (bbox.x0 + bbox.x1) as f64 / 2.0 / fw;
    let cy = (bbox.y0 + bbox.y1) as f64 / 2.0 / fh;
    let w = (bbox.x1 - bbox.x0) as f64 / fw;
    let h = (bbox.y1 - bbox.y0) as f64 / fh;
    format!("{class} {cx:.6} {cy:.6} {w:.6} {h:.6}")
}

pub fn parse_label_line(line: &str) -> Result<(usize, [f64; 4])> {
    let bad = || Error::InvalidInput(format!("malformed label line `{line}`"));
    let mut parts = line.split_whitespace();
    let class: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let mut v = [0.0; 4];
    for slot in &mut v {
        *slot = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    }
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((class, v))
}

/// Back to integer pixel corners `[x0, y0, x1, y1]`.
pub fn denormalize(v: [f64; 4], frame_w: u32, frame_h: u32) -> [i64; 4] {
    let (fw, fh) = (frame_w as f64, frame_h as f64);
    let [cx, cy, w, h] = v;
    [
        ((cx - w / 2.0) * fw).round() as i64,
        ((cy - h / 2.0) * fh).round() as i64,
        ((cx + w / 2.0) * fw).round() as i64,
        ((cy + h / 2.0) * fh).round() as i64,
    ]
}
