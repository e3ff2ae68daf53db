//! Track-length histogram as a standalone SVG.

use std::fmt::Write as _;

use super::LifeCycleReport;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

/// Bars of track counts per length bin, with the inferior share overlaid.
pub fn life_cycle_svg(report: &LifeCycleReport) -> String {
    let n = report.bins.len().max(1);
    let max = report.bins.iter().map(|b| b.tracks).max().unwrap_or(0).max(1) as f64;
    let bw = (W - 2.0 * PAD) / n as f64;
    let scale = (H - 2.0 * PAD) / max;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let base = H - PAD;
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, W - PAD);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{base}" stroke="black"/>"#);
    for (k, b) in report.bins.iter().enumerate() {
        let x = PAD + k as f64 * bw;
        let h_all = b.tracks as f64 * scale;
        let h_bad = b.inferior as f64 * scale;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#7aa6d6"/>"##,
            x + 2.0,
            base - h_all,
            bw - 4.0,
            h_all
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#d9534f"/>"##,
            x + 2.0,
            base - h_bad,
            bw - 4.0,
            h_bad
        );
        let label = match b.hi_s {
            Some(_) => format!("{:.0}", b.lo_s),
            None => format!("{:.0}+", b.lo_s),
        };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, x + 0.5 * bw, base + 14.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + 0.5 * bw,
            base - h_all - 4.0,
            b.tracks
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">track length (s)</text>"#, W / 2.0, H - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}">tracks (red: more than 10% totally missed)</text>"#,
        PAD - 16.0
    );
    s.push_str("</svg>\n");
    s
}
