//! SVG phase portraits for planar state trajectories: unsafe region
//! shaded, barrier boundary drawn, one polyline per trajectory.

use nalgebra::DVector;

use crate::error::Error;
use crate::safe_sets::SafeSet;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 40.0;
const UNSAFE_FILL: &str = "#f3c0bd";
const SAFE_FILL: &str = "#ffffff";
const TRACE_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One labelled planar trace.
#[derive(Debug, Clone)]
pub struct Trace {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Bounds {
    fn expand(&mut self, p: [f64; 2]) {
        self.xmin = self.xmin.min(p[0]);
        self.xmax = self.xmax.max(p[0]);
        self.ymin = self.ymin.min(p[1]);
        self.ymax = self.ymax.max(p[1]);
    }

    fn pad(mut self, frac: f64) -> Self {
        let dx = (self.xmax - self.xmin).max(1e-9) * frac;
        let dy = (self.ymax - self.ymin).max(1e-9) * frac;
        self.xmin -= dx;
        self.xmax += dx;
        self.ymin -= dy;
        self.ymax += dy;
        self
    }

    fn to_screen(self, p: [f64; 2]) -> (f64, f64) {
        let sx = PAD + (p[0] - self.xmin) / (self.xmax - self.xmin) * (WIDTH - 2.0 * PAD);
        let sy = HEIGHT - PAD - (p[1] - self.ymin) / (self.ymax - self.ymin) * (HEIGHT - 2.0 * PAD);
        (sx, sy)
    }

    fn corners(&self) -> Vec<[f64; 2]> {
        vec![
            [self.xmin, self.ymin],
            [self.xmax, self.ymin],
            [self.xmax, self.ymax],
            [self.xmin, self.ymax],
        ]
    }
}

/// Sutherland–Hodgman clip of a convex polygon against `qᵀx + r >= 0`.
fn clip_halfplane(poly: &[[f64; 2]], q: [f64; 2], r: f64) -> Vec<[f64; 2]> {
    let inside = |p: [f64; 2]| q[0] * p[0] + q[1] * p[1] + r >= 0.0;
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ia, ib) = (inside(a), inside(b));
        if ia {
            out.push(a);
        }
        if ia != ib {
            let fa = q[0] * a[0] + q[1] * a[1] + r;
            let fb = q[0] * b[0] + q[1] * b[1] + r;
            let t = fa / (fa - fb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Polygon vertices in world coordinates.
type Polygon = Vec<[f64; 2]>;

/// Safe-region polygon clipped to the view, plus the h=0 boundary
/// segments, both in world coordinates.
fn safe_region(set: &SafeSet, view: &Bounds) -> Result<(Polygon, Vec<Polygon>), Error> {
    match set {
        SafeSet::HalfSpace(hs) => {
            if hs.q.len() != 2 {
                return Err(Error::Precondition("phase portraits need planar states".into()));
            }
            let q = [hs.q[0], hs.q[1]];
            let poly = clip_halfplane(&view.corners(), q, hs.r);
            let boundary = boundary_segment(q, hs.r, view);
            Ok((poly, vec![boundary]))
        }
        SafeSet::Polytope(p) => {
            if p.q.nrows() != 2 {
                return Err(Error::Precondition("phase portraits need planar states".into()));
            }
            let mut poly = view.corners();
            let mut boundaries = Vec::new();
            for i in 0..p.num_rows() {
                let q = [p.q[(0, i)], p.q[(1, i)]];
                poly = clip_halfplane(&poly, q, p.r[i]);
                boundaries.push(boundary_segment(q, p.r[i], view));
            }
            Ok((poly, boundaries))
        }
        SafeSet::Ellipsoid(e) => {
            if e.e.nrows() != 2 {
                return Err(Error::Precondition("phase portraits need planar states".into()));
            }
            // Boundary xᵀEx = r, sampled radially: t(θ)·d with
            // t = sqrt(r / dᵀEd).
            let n = 128;
            let mut ring = Vec::with_capacity(n);
            for k in 0..n {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let d = DVector::from_vec(vec![theta.cos(), theta.sin()]);
                let t = (e.r / (d.transpose() * &e.e * &d)[(0, 0)]).sqrt();
                ring.push([t * d[0], t * d[1]]);
            }
            let mut closed = ring.clone();
            closed.push(ring[0]);
            Ok((ring, vec![closed]))
        }
        SafeSet::Smooth(_) => Err(Error::Precondition(
            "phase portraits are drawn for half-space, polytope, and ellipsoid sets".into(),
        )),
    }
}

/// Chord of the line `qᵀx + r = 0` across the view rectangle.
fn boundary_segment(q: [f64; 2], r: f64, view: &Bounds) -> Vec<[f64; 2]> {
    let mut pts = Vec::new();
    let f = |p: [f64; 2]| q[0] * p[0] + q[1] * p[1] + r;
    let corners = view.corners();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let (fa, fb) = (f(a), f(b));
        if (fa <= 0.0) != (fb <= 0.0) {
            let t = fa / (fa - fb);
            pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    pts
}

fn polygon_points(poly: &[[f64; 2]], view: &Bounds) -> String {
    poly.iter()
        .map(|&p| {
            let (x, y) = view.to_screen(p);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders the phase portrait: unsafe region shaded, barrier boundary
/// drawn, one polyline and one legend entry per trace.
pub fn phase_portrait_svg(set: &SafeSet, traces: &[Trace]) -> Result<String, Error> {
    if traces.is_empty() || traces.iter().any(|t| t.points.is_empty()) {
        return Err(Error::Precondition("phase portrait needs non-empty traces".into()));
    }
    let mut bounds = Bounds {
        xmin: f64::INFINITY,
        xmax: f64::NEG_INFINITY,
        ymin: f64::INFINITY,
        ymax: f64::NEG_INFINITY,
    };
    bounds.expand([0.0, 0.0]);
    for t in traces {
        for &p in &t.points {
            bounds.expand(p);
        }
    }
    let view = bounds.pad(0.15);

    let (safe_poly, boundaries) = safe_region(set, &view)?;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    // Unsafe everywhere, then the safe region painted back on top.
    svg.push_str(&format!(
        "  <rect class=\"unsafe-region\" x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" \
         fill=\"{UNSAFE_FILL}\"/>\n",
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    ));
    if !safe_poly.is_empty() {
        svg.push_str(&format!(
            "  <polygon class=\"safe-region\" points=\"{}\" fill=\"{SAFE_FILL}\"/>\n",
            polygon_points(&safe_poly, &view)
        ));
    }
    for b in &boundaries {
        if b.len() >= 2 {
            svg.push_str(&format!(
                "  <polyline class=\"boundary\" points=\"{}\" fill=\"none\" stroke=\"#333333\" \
                 stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>\n",
                polygon_points(b, &view)
            ));
        }
    }
    for (i, t) in traces.iter().enumerate() {
        let color = TRACE_COLORS[i % TRACE_COLORS.len()];
        svg.push_str(&format!(
            "  <polyline class=\"trajectory\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.2\"/>\n",
            polygon_points(&t.points, &view)
        ));
        let (lx, ly) = (WIDTH - PAD - 170.0, PAD + 18.0 * (i as f64 + 1.0));
        svg.push_str(&format!(
            "  <line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            lx + 24.0
        ));
        svg.push_str(&format!(
            "  <text class=\"legend\" x=\"{}\" y=\"{}\" font-size=\"12\" \
             font-family=\"sans-serif\">{}</text>\n",
            lx + 30.0,
            ly + 4.0,
            xml_escape(&t.label)
        ));
    }
    svg.push_str(&format!(
        "  <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#000000\"/>\n",
        WIDTH - 2.0 * PAD,
        HEIGHT - 2.0 * PAD
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
