//! Minimal self-contained SVG figures: line charts and field heat maps.

use std::fmt::Write as _;

/// One polyline of a chart; `None` values break the line.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, Option<f64>)>,
}

const PALETTE: [&str; 6] = ["#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with linear or log10 y axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], log_y: bool) -> String {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let valid = |y: f64| y.is_finite() && (!log_y || y > 0.0);
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().filter_map(|p| p.1)).filter(|y| valid(*y)).map(ty);
    let (x0, x1) = bounds(xs);
    let (mut y0, mut y1) = bounds(ys);
    if !log_y {
        y0 = y0.min(0.0);
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (ty(y) - y0) / (y1 - y0) * (H - TOP - BOTTOM);
    let mut s = header(W, H);
    writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    )
    .unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let y_text = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
        let ypx = H - BOTTOM - f * (H - TOP - BOTTOM);
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{xv:.2}</text>"#, px(xv), H - BOTTOM + 14.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{ypx:.1}" text-anchor="end" font-size="10">{y_text}</text>"#, LEFT - 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 8.0, escape(x_label)).unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for &(x, y) in &ser.points {
            match y.filter(|y| valid(*y)) {
                Some(y) => segments.last_mut().unwrap().push((px(x), py(y))),
                None if !segments.last().unwrap().is_empty() => segments.push(Vec::new()),
                None => {}
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        }
        let ly = TOP + 14.0 + 14.0 * i as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{color}" text-anchor="end">{}</text>"#,
            W - RIGHT - 6.0,
            escape(ser.label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Heat maps of node-major scalar fields on an `nx` x `ny` grid, drawn in a
/// row with a shared colour scale. Row `y = 0` is at the bottom.
pub fn heatmap_row(title: &str, panels: &[(String, &[f64])], nx: usize, ny: usize) -> String {
    let cell = (160.0 / nx.max(ny) as f64).max(1.0);
    let (pw, ph) = (cell * nx as f64, cell * ny as f64);
    let gap = 12.0;
    let width = gap + panels.len() as f64 * (pw + gap);
    let height = ph + 60.0;
    let (lo, hi) = bounds(panels.iter().flat_map(|p| p.1.iter().copied()).filter(|v| v.is_finite()));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = header(width, height);
    writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{}</text>"#, width / 2.0, escape(title)).unwrap();
    for (k, (label, field)) in panels.iter().enumerate() {
        let ox = gap + k as f64 * (pw + gap);
        let oy = 26.0;
        for iy in 0..ny {
            for ix in 0..nx {
                let v = field.get(iy * nx + ix).copied().unwrap_or(f64::NAN);
                let color = if v.is_finite() { colormap((v - lo) / span) } else { "#ff00ff".into() };
                let x = ox + ix as f64 * cell;
                let y = oy + (ny - 1 - iy) as f64 * cell;
                writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{cell:.2}" height="{cell:.2}" fill="{color}"/>"#).unwrap();
            }
        }
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#, ox + pw / 2.0, oy + ph + 14.0, escape(label)).unwrap();
    }
    writeln!(
        s,
        r#"<text x="{gap}" y="{:.1}" font-size="10">scale [{lo:.4e}, {hi:.4e}]</text>"#,
        height - 6.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Blue-white-red diverging map on `[0, 1]`.
fn colormap(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let f = t / 0.5;
        (f, f, 1.0)
    } else {
        let f = (1.0 - t) / 0.5;
        (1.0, f, f)
    };
    format!("#{:02x}{:02x}{:02x}", (r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8)
}
