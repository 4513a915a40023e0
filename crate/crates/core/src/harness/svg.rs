//! Native SVG rendering for curves and heatmaps. Presentational output,
//! excluded from the bit-exactness guarantees of the CSV exports.

use std::fmt::Write as _;

use super::{AggregateCurve, HeatmapGrid};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_y: bool,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let ty = if self.log_y { y.max(1e-300).log10() } else { y };
        let (y0, y1) = if self.log_y {
            (
                self.y_min.max(1e-300).log10(),
                self.y_max.max(1e-300).log10(),
            )
        } else {
            (self.y_min, self.y_max)
        };
        let w = WIDTH - 2.0 * MARGIN;
        let h = HEIGHT - 2.0 * MARGIN;
        let px = MARGIN + (x - self.x_min) / (self.x_max - self.x_min).max(1e-300) * w;
        let py = HEIGHT - MARGIN - (ty - y0) / (y1 - y0).max(1e-300) * h;
        (px, py)
    }
}

fn polyline(frame: &Frame, points: &[(f64, f64)], color: &str, dashed: bool) -> String {
    let coords: Vec<String> = points
        .iter()
        .filter(|(_, y)| y.is_finite() && (!frame.log_y || *y > 0.0))
        .map(|&(x, y)| {
            let (px, py) = frame.map(x, y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let dash = if dashed {
        " stroke-dasharray=\"6,4\""
    } else {
        ""
    };
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Mean-q curves per policy with their bound overlays (dashed), log y-axis.
pub fn curves_svg(curves: &[(String, AggregateCurve)]) -> String {
    let mut x_max = 1.0f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, c) in curves {
        for (&k, &q) in c.ks.iter().zip(&c.mean_q) {
            x_max = x_max.max(k as f64);
            if q > 0.0 {
                y_min = y_min.min(q);
                y_max = y_max.max(q);
            }
        }
        if let Some(bound) = &c.bound {
            for &b in bound {
                if b > 0.0 {
                    y_max = y_max.max(b);
                }
            }
        }
    }
    if !y_min.is_finite() {
        y_min = 1e-12;
        y_max = 1.0;
    }
    let frame = Frame {
        x_min: 0.0,
        x_max,
        y_min,
        y_max,
        log_y: true,
    };
    let mut out = svg_open();
    out.push_str(&axes(&frame, "k", "mean q"));
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> =
            c.ks.iter()
                .zip(&c.mean_q)
                .map(|(&k, &q)| (k as f64, q))
                .collect();
        out.push_str(&polyline(&frame, &pts, color, false));
        if let Some(bound) = &c.bound {
            let pts: Vec<(f64, f64)> =
                c.ks.iter()
                    .zip(bound)
                    .map(|(&k, &b)| (k as f64, b))
                    .collect();
            out.push_str(&polyline(&frame, &pts, color, true));
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{label}</text>",
            WIDTH - MARGIN - 150.0,
            MARGIN + 16.0 * (i as f64 + 1.0)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heatmap of h with level sets of `f` (solid) overlaid on level sets of the
/// rate itself, marching-squares contours.
pub fn heatmap_svg(grid: &HeatmapGrid, f_values: &[f64], n_levels: usize) -> String {
    let nx = grid.xs.len();
    let ny = grid.ys.len();
    let finite: Vec<f64> = grid.h.iter().cloned().filter(|v| v.is_finite()).collect();
    let h_min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let h_max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame {
        x_min: grid.xs[0],
        x_max: *grid.xs.last().unwrap(),
        y_min: grid.ys[0],
        y_max: *grid.ys.last().unwrap(),
        log_y: false,
    };
    let mut out = svg_open();
    let cell_w = (WIDTH - 2.0 * MARGIN) / nx as f64;
    let cell_h = (HEIGHT - 2.0 * MARGIN) / ny as f64;
    for iy in 0..ny {
        for ix in 0..nx {
            let v = grid.h[iy * nx + ix];
            let color = if v.is_finite() {
                let t = if h_max > h_min {
                    (v - h_min) / (h_max - h_min)
                } else {
                    0.5
                };
                viridis(t)
            } else {
                "#888888".to_string()
            };
            let (px, py) = frame.map(grid.xs[ix], grid.ys[iy]);
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
                px - cell_w / 2.0,
                py - cell_h / 2.0,
                cell_w + 0.5,
                cell_h + 0.5
            );
        }
    }
    let f_min = f_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let f_max = f_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for level_i in 1..=n_levels {
        let level = f_min + (f_max - f_min) * level_i as f64 / (n_levels + 1) as f64;
        for seg in contour_segments(grid, f_values, level) {
            let (x1, y1) = frame.map(seg.0, seg.1);
            let (x2, y2) = frame.map(seg.2, seg.3);
            let _ = writeln!(
                out,
                "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"#ffffff\" stroke-width=\"1\"/>"
            );
        }
    }
    out.push_str(&axes(&frame, "x1", "x2"));
    out.push_str("</svg>\n");
    out
}

/// Marching squares: iso-line segments of `values` at `level`.
fn contour_segments(grid: &HeatmapGrid, values: &[f64], level: f64) -> Vec<(f64, f64, f64, f64)> {
    let nx = grid.xs.len();
    let ny = grid.ys.len();
    let at = |ix: usize, iy: usize| values[iy * nx + ix];
    let lerp = |a: f64, b: f64, va: f64, vb: f64| {
        if (vb - va).abs() < 1e-300 {
            (a + b) / 2.0
        } else {
            a + (level - va) / (vb - va) * (b - a)
        }
    };
    let mut segs = Vec::new();
    for iy in 0..ny - 1 {
        for ix in 0..nx - 1 {
            let (x0, x1) = (grid.xs[ix], grid.xs[ix + 1]);
            let (y0, y1) = (grid.ys[iy], grid.ys[iy + 1]);
            let v = [
                at(ix, iy),
                at(ix + 1, iy),
                at(ix + 1, iy + 1),
                at(ix, iy + 1),
            ];
            if v.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let mut pts: Vec<(f64, f64)> = Vec::new();
            // edges: bottom, right, top, left
            if (v[0] < level) != (v[1] < level) {
                pts.push((lerp(x0, x1, v[0], v[1]), y0));
            }
            if (v[1] < level) != (v[2] < level) {
                pts.push((x1, lerp(y0, y1, v[1], v[2])));
            }
            if (v[3] < level) != (v[2] < level) {
                pts.push((lerp(x0, x1, v[3], v[2]), y1));
            }
            if (v[0] < level) != (v[3] < level) {
                pts.push((x0, lerp(y0, y1, v[0], v[3])));
            }
            if pts.len() >= 2 {
                segs.push((pts[0].0, pts[0].1, pts[1].0, pts[1].1));
            }
            if pts.len() == 4 {
                segs.push((pts[2].0, pts[2].1, pts[3].0, pts[3].1));
            }
        }
    }
    segs
}

fn viridis(t: f64) -> String {
    // Coarse 5-stop approximation is plenty for a diagnostic plot.
    let stops = [
        (0.0, (68u8, 1u8, 84u8)),
        (0.25, (59, 82, 139)),
        (0.5, (33, 145, 140)),
        (0.75, (94, 201, 98)),
        (1.0, (253, 231, 37)),
    ];
    let t = t.clamp(0.0, 1.0);
    for w in stops.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = (t - t0) / (t1 - t0);
            let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)) as u8;
            return format!(
                "#{:02x}{:02x}{:02x}",
                mix(c0.0, c1.0),
                mix(c0.1, c1.1),
                mix(c0.2, c1.2)
            );
        }
    }
    "#fde725".to_string()
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn axes(frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">{x_label}</text>\n<text x=\"12\" y=\"{}\" font-size=\"12\">{y_label}</text>",
        WIDTH / 2.0,
        HEIGHT - 14.0,
        HEIGHT / 2.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"10\">{:.3e}..{:.3e}</text>",
        MARGIN,
        MARGIN - 8.0,
        frame.y_min,
        frame.y_max
    );
    out
}
