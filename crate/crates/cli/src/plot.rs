//! Hand-rolled SVG charts. Nothing here feeds back into the run: plots are
//! derived from already-written records, so a plotting bug can never change
//! metrics.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 46.0;

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_L + (v - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - MARGIN_B - (v - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn axes_frame(ax: &Axes, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let (x0, x1) = (MARGIN_L, WIDTH - MARGIN_R);
    let (y0, y1) = (HEIGHT - MARGIN_B, MARGIN_T);
    s.push_str(&format!(
        "<rect x=\"{x0:.1}\" y=\"{y1:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#888\"/>\n",
        x1 - x0,
        y0 - y1
    ));
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = ax.x_min + f * (ax.x_max - ax.x_min);
        let yv = ax.y_min + f * (ax.y_max - ax.y_min);
        let xp = ax.x(xv);
        let yp = ax.y(yv);
        s.push_str(&format!(
            "<line x1=\"{xp:.1}\" y1=\"{y0:.1}\" x2=\"{xp:.1}\" y2=\"{:.1}\" stroke=\"#888\"/>\n",
            y0 + 4.0
        ));
        s.push_str(&format!(
            "<text x=\"{xp:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 17.0,
            tick_label(xv)
        ));
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{yp:.1}\" x2=\"{x0:.1}\" y2=\"{yp:.1}\" stroke=\"#888\"/>\n",
            x0 - 4.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            x0 - 7.0,
            yp + 4.0,
            tick_label(yv)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));
    s
}

fn polyline(points: &[(f64, f64)], style: &str) -> String {
    if points.len() < 2 {
        return String::new();
    }
    let coords: Vec<String> =
        points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!("<polyline points=\"{}\" fill=\"none\" {style}/>\n", coords.join(" "))
}

/// Per-seed cost curves in light gray with the cross-seed mean on top.
/// `curves` pairs each seed with its learned-iteration costs.
pub fn cost_curves(title: &str, curves: &[(u64, Vec<f64>)], mean: &[f64]) -> String {
    let mut svg = header(title);
    let finite: Vec<f64> = curves
        .iter()
        .flat_map(|(_, c)| c.iter())
        .chain(mean.iter())
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let n = curves.iter().map(|(_, c)| c.len()).chain([mean.len()]).max().unwrap_or(0);
    if finite.is_empty() || n == 0 {
        svg.push_str("<text x=\"320\" y=\"210\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return svg;
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1.0);
    let y_min = if lo >= 0.0 { (lo - pad).max(0.0) } else { lo - pad };
    let ax = Axes { x_min: 1.0, x_max: n.max(2) as f64, y_min, y_max: hi + pad };
    svg.push_str(&axes_frame(&ax, "iteration", "iteration cost"));
    for (_, curve) in curves {
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (ax.x((i + 1) as f64), ax.y(*v)))
            .collect();
        svg.push_str(&polyline(&pts, "stroke=\"#b9c4d0\" stroke-width=\"1\""));
    }
    let pts: Vec<(f64, f64)> = mean
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, v)| (ax.x((i + 1) as f64), ax.y(*v)))
        .collect();
    svg.push_str(&polyline(&pts, "stroke=\"#1f5fa8\" stroke-width=\"2.5\""));
    svg.push_str("</svg>\n");
    svg
}

const PALETTE: [&str; 6] =
    ["#1f5fa8", "#c44e52", "#55a868", "#8172b2", "#937860", "#64b5cd"];

/// One colored mean curve per labeled series, with a legend.
pub fn labeled_curves(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut svg = header(title);
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|(_, c)| c.iter())
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    let n = series.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    if finite.is_empty() || n == 0 {
        svg.push_str("<text x=\"320\" y=\"210\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return svg;
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1.0);
    let y_min = if lo >= 0.0 { (lo - pad).max(0.0) } else { lo - pad };
    let ax = Axes { x_min: 1.0, x_max: n.max(2) as f64, y_min, y_max: hi + pad };
    svg.push_str(&axes_frame(&ax, "iteration", y_label));
    for (k, (label, curve)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (ax.x((i + 1) as f64), ax.y(*v)))
            .collect();
        svg.push_str(&polyline(&pts, &format!("stroke=\"{color}\" stroke-width=\"2\"")));
        let ly = MARGIN_T + 16.0 + 16.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            WIDTH - MARGIN_R - 150.0,
            WIDTH - MARGIN_R - 128.0,
            WIDTH - MARGIN_R - 122.0,
            ly + 4.0,
            escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Static geometry plus position traces colored by speed.
#[derive(Debug, Default)]
pub struct TrajectoryScene {
    /// Gray polylines drawn beneath everything (track edges, centerline).
    pub outlines: Vec<Vec<[f64; 2]>>,
    /// Filled disks (obstacles).
    pub disks: Vec<([f64; 2], f64)>,
    /// Cross marker (target position).
    pub marker: Option<[f64; 2]>,
    /// One (position, speed) sequence per plotted episode.
    pub paths: Vec<Vec<([f64; 2], f64)>>,
}

fn speed_color(f: f64) -> String {
    // Blue through violet to red as speed rises.
    let f = f.clamp(0.0, 1.0);
    let r = (40.0 + 190.0 * f) as u8;
    let g = (70.0 * (1.0 - f)) as u8;
    let b = (190.0 - 150.0 * f) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn trajectories(title: &str, scene: &TrajectoryScene) -> String {
    let mut svg = header(title);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for line in &scene.outlines {
        for p in line {
            xs.push(p[0]);
            ys.push(p[1]);
        }
    }
    for (c, r) in &scene.disks {
        xs.extend([c[0] - r, c[0] + r]);
        ys.extend([c[1] - r, c[1] + r]);
    }
    if let Some(m) = scene.marker {
        xs.push(m[0]);
        ys.push(m[1]);
    }
    for path in &scene.paths {
        for (p, _) in path {
            xs.push(p[0]);
            ys.push(p[1]);
        }
    }
    if xs.is_empty() {
        svg.push_str("<text x=\"320\" y=\"210\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return svg;
    }
    let (x_lo, x_hi) = bounds(&xs);
    let (y_lo, y_hi) = bounds(&ys);
    // Equal scale on both axes so geometry is not distorted.
    let span = (x_hi - x_lo).max((y_hi - y_lo) * (WIDTH - MARGIN_L - MARGIN_R)
        / (HEIGHT - MARGIN_T - MARGIN_B))
        .max(1e-9);
    let y_span = span * (HEIGHT - MARGIN_T - MARGIN_B) / (WIDTH - MARGIN_L - MARGIN_R);
    let xc = 0.5 * (x_lo + x_hi);
    let yc = 0.5 * (y_lo + y_hi);
    let ax = Axes {
        x_min: xc - 0.55 * span,
        x_max: xc + 0.55 * span,
        y_min: yc - 0.55 * y_span,
        y_max: yc + 0.55 * y_span,
    };
    svg.push_str(&axes_frame(&ax, "x [m]", "y [m]"));
    for line in &scene.outlines {
        let pts: Vec<(f64, f64)> =
            line.iter().map(|p| (ax.x(p[0]), ax.y(p[1]))).collect();
        svg.push_str(&polyline(&pts, "stroke=\"#999\" stroke-width=\"1.2\""));
    }
    for (c, r) in &scene.disks {
        let rx = ax.x(c[0] + r) - ax.x(c[0]);
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#e4c2c2\" stroke=\"#a55\"/>\n",
            ax.x(c[0]),
            ax.y(c[1]),
            rx.abs()
        ));
    }
    let v_max = scene
        .paths
        .iter()
        .flat_map(|p| p.iter().map(|(_, v)| *v))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    for path in &scene.paths {
        for pair in path.windows(2) {
            let (p0, v0) = pair[0];
            let (p1, v1) = pair[1];
            let color = speed_color(0.5 * (v0 + v1) / v_max);
            svg.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
                 stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
                ax.x(p0[0]),
                ax.y(p0[1]),
                ax.x(p1[0]),
                ax.y(p1[1])
            ));
        }
    }
    if let Some(m) = scene.marker {
        let (mx, my) = (ax.x(m[0]), ax.y(m[1]));
        svg.push_str(&format!(
            "<path d=\"M {:.1} {my:.1} L {:.1} {my:.1} M {mx:.1} {:.1} L {mx:.1} {:.1}\" \
             stroke=\"#2a7\" stroke-width=\"2\"/>\n",
            mx - 6.0,
            mx + 6.0,
            my - 6.0,
            my + 6.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">speed 0</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.1} m/s</text>\n",
        MARGIN_L + 4.0,
        MARGIN_T + 14.0,
        WIDTH - MARGIN_R - 4.0,
        MARGIN_T + 14.0,
        v_max
    ));
    svg.push_str("</svg>\n");
    svg
}

fn bounds(vs: &[f64]) -> (f64, f64) {
    let lo = vs.iter().cloned().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = vs.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}
