//! Centerline track geometry: cubic-spline interpolation of waypoints,
//! arc-length parameterization, point projection, and a curvature lookup
//! table for the lap dynamics.
//!
//! The spline is parameterized by cumulative chord length and converted to
//! arc length with per-segment Gauss-Legendre quadrature. Closed tracks use a
//! periodic spline (cyclic tridiagonal moment system), open tracks a natural
//! one. Lateral offsets are signed positive to the LEFT of the direction of
//! travel, so a counterclockwise loop has negative offsets on its outside.

use crate::{Error, Result};

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Curvature table spacing in meters of arc length.
const LUT_SPACING: f64 = 0.1;
/// Projection seed table spacing in meters of chord.
const TABLE_SPACING: f64 = 0.2;
/// Lateral offsets beyond this fraction of the minimum turn radius make the
/// closest-point problem ill-posed.
const PROJECTION_RADIUS_FRACTION: f64 = 0.95;

#[derive(Debug, Clone)]
struct Segment {
    /// Polynomial coefficients a + b u + c u^2 + d u^3 on u in [0, h].
    x: [f64; 4],
    y: [f64; 4],
    h: f64,
}

impl Segment {
    fn eval(&self, u: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let p = [
            self.x[0] + u * (self.x[1] + u * (self.x[2] + u * self.x[3])),
            self.y[0] + u * (self.y[1] + u * (self.y[2] + u * self.y[3])),
        ];
        let d1 = [
            self.x[1] + u * (2.0 * self.x[2] + 3.0 * u * self.x[3]),
            self.y[1] + u * (2.0 * self.y[2] + 3.0 * u * self.y[3]),
        ];
        let d2 = [
            2.0 * self.x[2] + 6.0 * u * self.x[3],
            2.0 * self.y[2] + 6.0 * u * self.y[3],
        ];
        (p, d1, d2)
    }

    fn speed(&self, u: f64) -> f64 {
        let (_, d1, _) = self.eval(u);
        d1[0].hypot(d1[1])
    }

    /// Integral of the parametric speed over [u0, u1].
    fn arc(&self, u0: f64, u1: f64) -> f64 {
        let mid = 0.5 * (u0 + u1);
        let half = 0.5 * (u1 - u0);
        let mut sum = 0.0;
        for (node, w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            sum += w * self.speed(mid + half * node);
        }
        sum * half
    }
}

pub struct TrackGeometry {
    closed: bool,
    knots: Vec<f64>,
    segments: Vec<Segment>,
    /// Cumulative arc length at each knot; last entry is the total length.
    seg_arc: Vec<f64>,
    half_width: f64,
    /// Dense (t, point) table used to seed projection Newton iterations.
    table_t: Vec<f64>,
    table_p: Vec<[f64; 2]>,
    kappa_lut: Vec<f64>,
    lut_ds: f64,
    min_turn_radius: f64,
}

impl TrackGeometry {
    pub fn new(points: &[[f64; 2]], half_width: f64, closed: bool) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Config("track needs at least 3 waypoints".into()));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Config(format!("track half width must be positive, got {half_width}")));
        }
        for p in points {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::Config("non-finite track waypoint".into()));
            }
        }
        let n = points.len();
        let n_seg = if closed { n } else { n - 1 };
        let mut knots = Vec::with_capacity(n_seg + 1);
        knots.push(0.0);
        for i in 0..n_seg {
            let a = points[i];
            let b = points[(i + 1) % n];
            let h = (b[0] - a[0]).hypot(b[1] - a[1]);
            if h < 1e-9 {
                return Err(Error::Config(format!("duplicate track waypoints at index {i}")));
            }
            knots.push(knots[i] + h);
        }

        let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
        let hs: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let (mx, my) = if closed {
            (periodic_moments(&xs, &hs), periodic_moments(&ys, &hs))
        } else {
            (natural_moments(&xs, &hs), natural_moments(&ys, &hs))
        };

        let mut segments = Vec::with_capacity(n_seg);
        for i in 0..n_seg {
            let j = (i + 1) % n;
            let h = hs[i];
            let coef = |v: &[f64], m: &[f64]| {
                let (m0, m1) = (m[i], m[j % m.len()]);
                [
                    v[i],
                    (v[j] - v[i]) / h - h * (2.0 * m0 + m1) / 6.0,
                    m0 / 2.0,
                    (m1 - m0) / (6.0 * h),
                ]
            };
            segments.push(Segment { x: coef(&xs, &mx), y: coef(&ys, &my), h });
        }

        let mut seg_arc = Vec::with_capacity(n_seg + 1);
        seg_arc.push(0.0);
        for (i, seg) in segments.iter().enumerate() {
            seg_arc.push(seg_arc[i] + seg.arc(0.0, seg.h));
        }

        let mut table_t = Vec::new();
        let mut table_p = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            let steps = (seg.h / TABLE_SPACING).ceil().max(2.0) as usize;
            for k in 0..steps {
                let u = seg.h * k as f64 / steps as f64;
                table_t.push(knots[i] + u);
                table_p.push(seg.eval(u).0);
            }
        }
        // Terminal sample so open tracks can seed at the far endpoint.
        table_t.push(*knots.last().unwrap());
        table_p.push(segments.last().unwrap().eval(segments.last().unwrap().h).0);

        let mut geom = Self {
            closed,
            knots,
            segments,
            seg_arc,
            half_width,
            table_t,
            table_p,
            kappa_lut: Vec::new(),
            lut_ds: LUT_SPACING,
            min_turn_radius: f64::INFINITY,
        };

        let total = geom.total_length();
        let n_lut = (total / LUT_SPACING).ceil().max(1.0) as usize;
        geom.lut_ds = total / n_lut as f64;
        let mut kmax: f64 = 0.0;
        let mut lut = Vec::with_capacity(n_lut + 1);
        for j in 0..=n_lut {
            let k = geom.curvature_exact(j as f64 * geom.lut_ds);
            kmax = kmax.max(k.abs());
            lut.push(k);
        }
        geom.kappa_lut = lut;
        geom.min_turn_radius = if kmax > 1e-12 { 1.0 / kmax } else { f64::INFINITY };
        Ok(geom)
    }

    pub fn total_length(&self) -> f64 {
        *self.seg_arc.last().unwrap()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn min_turn_radius(&self) -> f64 {
        self.min_turn_radius
    }

    /// Wrap (closed) or clamp (open) an arc position into [0, L].
    pub fn wrap_s(&self, s: f64) -> f64 {
        let total = self.total_length();
        if self.closed {
            s.rem_euclid(total)
        } else {
            s.clamp(0.0, total)
        }
    }

    /// Shift a wrapped arc position by whole laps so it lands nearest `hint`.
    pub fn unwrap_near(&self, s_wrapped: f64, hint: f64) -> f64 {
        if !self.closed {
            return s_wrapped;
        }
        let total = self.total_length();
        let base = s_wrapped + ((hint - s_wrapped) / total).round() * total;
        base
    }

    fn segment_at_t(&self, t: f64) -> (usize, f64) {
        let idx = match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.segments.len() - 1),
        };
        (idx, t - self.knots[idx])
    }

    fn eval_t(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let t_max = *self.knots.last().unwrap();
        let t = if self.closed { t.rem_euclid(t_max) } else { t.clamp(0.0, t_max) };
        let (i, u) = self.segment_at_t(t);
        self.segments[i].eval(u)
    }

    fn s_of_t(&self, t: f64) -> f64 {
        let (i, u) = self.segment_at_t(t);
        self.seg_arc[i] + self.segments[i].arc(0.0, u)
    }

    fn t_of_s(&self, s: f64) -> f64 {
        let s = self.wrap_s(s);
        let idx = match self.seg_arc.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.segments.len() - 1),
        };
        let seg = &self.segments[idx];
        let target = s - self.seg_arc[idx];
        let span = self.seg_arc[idx + 1] - self.seg_arc[idx];
        let mut u = (target / span * seg.h).clamp(0.0, seg.h);
        // Newton on the within-segment arc integral; the speed is smooth and
        // strictly positive so a handful of steps reaches roundoff.
        for _ in 0..12 {
            let err = seg.arc(0.0, u) - target;
            let du = err / seg.speed(u);
            u = (u - du).clamp(0.0, seg.h);
            if du.abs() < 1e-12 * (1.0 + seg.h) {
                break;
            }
        }
        self.knots[idx] + u
    }

    pub fn position(&self, s: f64) -> [f64; 2] {
        self.eval_t(self.t_of_s(s)).0
    }

    /// Heading of the centerline tangent at arc position s.
    pub fn tangent_angle(&self, s: f64) -> f64 {
        let (_, d1, _) = self.eval_t(self.t_of_s(s));
        d1[1].atan2(d1[0])
    }

    /// Unit left normal at arc position s.
    pub fn normal(&self, s: f64) -> [f64; 2] {
        let (_, d1, _) = self.eval_t(self.t_of_s(s));
        let n = d1[0].hypot(d1[1]);
        [-d1[1] / n, d1[0] / n]
    }

    /// Signed curvature from the lookup table (positive for left turns).
    pub fn curvature(&self, s: f64) -> f64 {
        let s = self.wrap_s(s);
        let pos = s / self.lut_ds;
        let j = (pos.floor() as usize).min(self.kappa_lut.len() - 2);
        let frac = pos - j as f64;
        self.kappa_lut[j] * (1.0 - frac) + self.kappa_lut[j + 1] * frac
    }

    pub fn curvature_exact(&self, s: f64) -> f64 {
        let (_, d1, d2) = self.eval_t(self.t_of_s(s));
        let speed2 = d1[0] * d1[0] + d1[1] * d1[1];
        (d1[0] * d2[1] - d1[1] * d2[0]) / speed2.powf(1.5)
    }

    /// Cartesian point at arc position s and signed lateral offset e_y.
    pub fn point_at(&self, s: f64, e_y: f64) -> [f64; 2] {
        let t = self.t_of_s(s);
        let (p, d1, _) = self.eval_t(t);
        let norm = d1[0].hypot(d1[1]);
        [p[0] - e_y * d1[1] / norm, p[1] + e_y * d1[0] / norm]
    }

    /// Closest centerline point: returns (wrapped arc position, signed
    /// lateral offset). Fails when the query sits too far from the line for
    /// the projection to be well defined.
    pub fn project(&self, p: [f64; 2]) -> Result<(f64, f64)> {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, q) in self.table_p.iter().enumerate() {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        let t_max = *self.knots.last().unwrap();
        let mut t = self.table_t[best];
        // Newton on g(t) = (r(t) - p) . r'(t); within the valid tube g is
        // strictly increasing so the step is well behaved. Cap the step at
        // one table cell to stay inside the seeded valley.
        let max_step = 2.0 * TABLE_SPACING;
        for _ in 0..40 {
            let (r, d1, d2) = self.eval_t(t);
            let diff = [r[0] - p[0], r[1] - p[1]];
            let g = diff[0] * d1[0] + diff[1] * d1[1];
            let dg = d1[0] * d1[0] + d1[1] * d1[1] + diff[0] * d2[0] + diff[1] * d2[1];
            if dg.abs() < 1e-12 {
                break;
            }
            let step = (g / dg).clamp(-max_step, max_step);
            t -= step;
            if self.closed {
                t = t.rem_euclid(t_max);
            } else {
                t = t.clamp(0.0, t_max);
            }
            if step.abs() < 1e-12 {
                break;
            }
        }
        let (r, d1, _) = self.eval_t(t);
        let norm = d1[0].hypot(d1[1]);
        let diff = [p[0] - r[0], p[1] - r[1]];
        let e_y = (-diff[0] * d1[1] + diff[1] * d1[0]) / norm;
        if e_y.abs() >= PROJECTION_RADIUS_FRACTION * self.min_turn_radius {
            return Err(Error::OffTrackProjection);
        }
        let tangential = (diff[0] * d1[0] + diff[1] * d1[1]) / norm;
        let interior = self.closed || (t > 1e-9 && t < t_max - 1e-9);
        if interior && tangential.abs() > 1e-6 * (1.0 + e_y.abs()) {
            return Err(Error::OffTrackProjection);
        }
        Ok((self.s_of_t(t), e_y))
    }
}

/// Natural cubic spline moments (second derivatives at the knots).
fn natural_moments(v: &[f64], h: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut sub = vec![0.0; inner];
    let mut sup = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for i in 0..inner {
        let k = i + 1;
        sub[i] = h[k - 1] / 6.0;
        diag[i] = (h[k - 1] + h[k]) / 3.0;
        sup[i] = h[k] / 6.0;
        rhs[i] = (v[k + 1] - v[k]) / h[k] - (v[k] - v[k - 1]) / h[k - 1];
    }
    let sol = thomas(&sub, &diag, &sup, &rhs);
    m[1..=inner].copy_from_slice(&sol);
    m
}

/// Periodic cubic spline moments for n distinct points on a loop.
fn periodic_moments(v: &[f64], h: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut diag = vec![0.0; n];
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let hm = h[(i + n - 1) % n];
        let hp = h[i];
        sub[i] = hm / 6.0;
        diag[i] = (hm + hp) / 3.0;
        sup[i] = hp / 6.0;
        let vm = v[(i + n - 1) % n];
        let vp = v[(i + 1) % n];
        rhs[i] = (vp - v[i]) / hp - (v[i] - vm) / hm;
    }
    cyclic_thomas(&sub, &diag, &sup, &rhs)
}

/// Tridiagonal solve; `sub[0]` and `sup[n-1]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let w = diag[i] - sub[i] * c[i - 1];
        c[i] = if i < n - 1 { sup[i] / w } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / w;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve via the Sherman-Morrison rank-one update.
fn cyclic_thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    // Corner entries: top-right couples node 0 to n-1, bottom-left the
    // reverse; both equal by symmetry of the moment system.
    let alpha = sub[0];
    let beta = sup[n - 1];
    let gamma = -diag[0];
    let mut diag_mod = diag.to_vec();
    diag_mod[0] -= gamma;
    diag_mod[n - 1] -= alpha * beta / gamma;
    let y = thomas(sub, &diag_mod, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(sub, &diag_mod, sup, &u);
    let vy = y[0] + beta / gamma * y[n - 1];
    let vz = z[0] + beta / gamma * z[n - 1];
    let factor = vy / (1.0 + vz);
    y.iter().zip(&z).map(|(yi, zi)| yi - factor * zi).collect()
}

/// Stadium-shaped counterclockwise centerline: two straights of the given
/// length joined by semicircles, sampled roughly every `spacing` meters.
/// Starts at the middle of the bottom straight heading +x.
pub fn oval_centerline(straight: f64, radius: f64, spacing: f64) -> Vec<[f64; 2]> {
    let hs = straight / 2.0;
    let mut pts = Vec::new();
    let line = |pts: &mut Vec<[f64; 2]>, a: [f64; 2], b: [f64; 2]| {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            pts.push([a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]);
        }
    };
    let arc = |pts: &mut Vec<[f64; 2]>, c: [f64; 2], a0: f64, a1: f64| {
        let len = radius * (a1 - a0).abs();
        let n = (len / spacing).ceil().max(2.0) as usize;
        for k in 0..n {
            let a = a0 + (a1 - a0) * k as f64 / n as f64;
            pts.push([c[0] + radius * a.cos(), c[1] + radius * a.sin()]);
        }
    };
    use std::f64::consts::PI;
    line(&mut pts, [0.0, -radius], [hs, -radius]);
    arc(&mut pts, [hs, 0.0], -PI / 2.0, PI / 2.0);
    line(&mut pts, [hs, radius], [-hs, radius]);
    arc(&mut pts, [-hs, 0.0], PI / 2.0, 3.0 * PI / 2.0);
    line(&mut pts, [-hs, -radius], [0.0, -radius]);
    pts
}

/// Parse a centerline CSV. Recognizes `x_m`/`x` and `y_m`/`y` coordinate
/// columns plus optional `w_tr_left_m`/`w_left_m` and right counterparts;
/// returns the waypoints and, when widths are present, the smallest half
/// width over all rows.
pub fn parse_track_csv(text: &str) -> Result<(Vec<[f64; 2]>, Option<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty track file".into()))?
        .trim_start_matches('#');
    let cols: Vec<String> =
        header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let find = |names: &[&str]| cols.iter().position(|c| names.contains(&c.as_str()));
    let ix = find(&["x_m", "x"])
        .ok_or_else(|| Error::Config("track file has no x column".into()))?;
    let iy = find(&["y_m", "y"])
        .ok_or_else(|| Error::Config("track file has no y column".into()))?;
    let il = find(&["w_tr_left_m", "w_left_m", "w_left"]);
    let ir = find(&["w_tr_right_m", "w_right_m", "w_right"]);

    let mut points = Vec::new();
    let mut min_width = f64::INFINITY;
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        let get = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| Error::Config(format!("bad track row {}", row + 2)))
        };
        points.push([get(ix)?, get(iy)?]);
        if let (Some(l), Some(r)) = (il, ir) {
            min_width = min_width.min(get(l)?).min(get(r)?);
        } else if let Some(l) = il.or(ir) {
            min_width = min_width.min(get(l)?);
        }
    }
    let width = if min_width.is_finite() { Some(min_width) } else { None };
    Ok((points, width))
}
