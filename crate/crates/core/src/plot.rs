//! Qualitative SVG renders: drivable mask, past and ground-truth
//! polylines, and one `<path>` per sampled future trajectory.

use std::fmt::Write;

use crate::model::AgentPrediction;
use crate::scene::Scene;

const CELL_PX: f64 = 8.0;
const SAMPLE_COLORS: [&str; 4] = ["#e4572e", "#f3a712", "#a8c686", "#669bbc"];

/// World position → pixel coordinates (x right, y down, one cell =
/// `CELL_PX` pixels).
fn to_px(scene: &Scene, x: f64, y: f64) -> (f64, f64) {
    let f = scene.frame();
    (
        (x - f.origin.x) / f.resolution * CELL_PX,
        (y - f.origin.y) / f.resolution * CELL_PX,
    )
}

fn polyline(scene: &Scene, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(x, y)| {
        let (px, py) = to_px(scene, x, y);
        format!("{px:.2},{py:.2}")
    })
    .collect::<Vec<_>>()
    .join(" ")
}

fn path_d(scene: &Scene, pts: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (i, (x, y)) in pts.enumerate() {
        let (px, py) = to_px(scene, x, y);
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(d, "{cmd} {px:.2} {py:.2} ");
    }
    d.trim_end().to_string()
}

/// Renders a scene with its predictions. Every sampled trajectory
/// becomes one `<path>`; past and ground truth are `<polyline>`s.
pub fn render_svg(scene: &Scene, predictions: &[AgentPrediction]) -> String {
    let w = scene.raster.width as f64 * CELL_PX;
    let h = scene.raster.height as f64 * CELL_PX;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\">"
    );
    let _ = writeln!(
        svg,
        "  <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#1d1f21\"/>"
    );

    // drivable cells
    let _ = writeln!(svg, "  <g fill=\"#3a3f44\">");
    for r in 0..scene.mask.height {
        for c in 0..scene.mask.width {
            if scene.mask.at(r, c) {
                let _ = writeln!(
                    svg,
                    "    <rect x=\"{x}\" y=\"{y}\" width=\"{CELL_PX}\" height=\"{CELL_PX}\"/>",
                    x = c as f64 * CELL_PX,
                    y = r as f64 * CELL_PX,
                );
            }
        }
    }
    let _ = writeln!(svg, "  </g>");

    // sampled futures, one path each
    for (a, agent) in predictions.iter().enumerate() {
        let color = SAMPLE_COLORS[a % SAMPLE_COLORS.len()];
        for sample in &agent.samples {
            let d = path_d(scene, sample.iter().map(|p| (p.x, p.y)));
            let _ = writeln!(
                svg,
                "  <path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" stroke-opacity=\"0.55\"/>"
            );
        }
    }

    // observed past and ground-truth future on top
    for track in &scene.tracks {
        let past = polyline(scene, track.past.iter().map(|p| (p.x, p.y)));
        let _ = writeln!(
            svg,
            "  <polyline points=\"{past}\" fill=\"none\" stroke=\"#7fb3ff\" stroke-width=\"2\"/>"
        );
        let anchor = track.last_observed();
        let gt = polyline(
            scene,
            std::iter::once((anchor.x, anchor.y)).chain(track.future.iter().map(|p| (p.x, p.y))),
        );
        let _ = writeln!(
            svg,
            "  <polyline points=\"{gt}\" fill=\"none\" stroke=\"#7bd389\" stroke-width=\"2\" stroke-dasharray=\"4 3\"/>"
        );
        let (cx, cy) = to_px(scene, anchor.x, anchor.y);
        let _ = writeln!(
            svg,
            "  <circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"#ffffff\"/>"
        );
    }
    svg.push_str("</svg>\n");
    svg
}
