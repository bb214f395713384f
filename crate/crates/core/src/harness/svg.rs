//! Minimal self-contained SVG rendering for run reports: time-series
//! line charts and deviation scatter plots with a confidence ellipse.

/// One named polyline on a line chart.
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: &'a [(f64, f64)],
}

/// Confidence ellipse in data coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle_rad: f64,
}

const W: f64 = 860.0;
const H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 52.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(0.01..1000.0).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

struct Bounds {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Bounds {
    fn grow(&mut self, x: f64, y: f64) {
        if x.is_finite() {
            self.x0 = self.x0.min(x);
            self.x1 = self.x1.max(x);
        }
        if y.is_finite() {
            self.y0 = self.y0.min(y);
            self.y1 = self.y1.max(y);
        }
    }

    fn pad(&mut self) {
        if self.x0 > self.x1 {
            self.x0 = 0.0;
            self.x1 = 1.0;
        }
        if self.y0 > self.y1 {
            self.y0 = 0.0;
            self.y1 = 1.0;
        }
        let dx = (self.x1 - self.x0).max(1e-9);
        let dy = (self.y1 - self.y0).max(1e-9);
        self.x0 -= dx * 0.04;
        self.x1 += dx * 0.04;
        self.y0 -= dy * 0.08;
        self.y1 += dy * 0.08;
    }

    fn map_x(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (W - MARGIN_L - MARGIN_R)
    }

    fn map_y(&self, y: f64) -> f64 {
        // SVG y grows downward.
        H - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (H - MARGIN_T - MARGIN_B)
    }
}

fn chart_frame(out: &mut String, title: &str, x_label: &str, y_label: &str, b: &Bounds) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" \
         font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        title
    ));
    let plot_w = W - MARGIN_L - MARGIN_R;
    let plot_h = H - MARGIN_T - MARGIN_B;
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#333\"/>\n"
    ));
    for k in 0..=4 {
        let fx = b.x0 + (b.x1 - b.x0) * k as f64 / 4.0;
        let fy = b.y0 + (b.y1 - b.y0) * k as f64 / 4.0;
        let px = b.map_x(fx);
        let py = b.map_y(fy);
        out.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{}\" x2=\"{px}\" y2=\"{}\" stroke=\"#ccc\"/>\n",
            MARGIN_T,
            H - MARGIN_B
        ));
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#ccc\"/>\n",
            W - MARGIN_R
        ));
        out.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            H - MARGIN_B + 18.0,
            fmt_tick(fx)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            py + 4.0,
            fmt_tick(fy)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        H - 12.0,
        x_label
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        y_label
    ));
}

/// Render named series against a shared axis pair.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut b = Bounds { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
    for s in series {
        for &(x, y) in s.points {
            b.grow(x, y);
        }
    }
    b.pad();

    let mut out = String::new();
    chart_frame(&mut out, title, x_label, y_label, &b);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", b.map_x(x), b.map_y(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.4\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        let ly = MARGIN_T + 16.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            W - MARGIN_R + 10.0,
            W - MARGIN_R + 34.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            W - MARGIN_R + 40.0,
            ly + 4.0,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Render a point cloud with an optional confidence ellipse and an
/// optional reference circle centered on the origin.
pub fn scatter_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    ellipse: Option<Ellipse>,
    ref_circle_radius: Option<f64>,
) -> String {
    let mut b = Bounds { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
    for &(x, y) in points {
        b.grow(x, y);
    }
    if let Some(e) = ellipse {
        let r = e.semi_major.max(e.semi_minor);
        b.grow(e.cx - r, e.cy - r);
        b.grow(e.cx + r, e.cy + r);
    }
    if let Some(r) = ref_circle_radius {
        b.grow(-r, -r);
        b.grow(r, r);
    }
    // Keep the aspect ratio square so circles look like circles.
    let span = (b.x1 - b.x0).max(b.y1 - b.y0).max(1e-9);
    let (cx, cy) = ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0);
    b.x0 = cx - span / 2.0;
    b.x1 = cx + span / 2.0;
    b.y0 = cy - span / 2.0;
    b.y1 = cy + span / 2.0;
    b.pad();

    let mut out = String::new();
    chart_frame(&mut out, title, x_label, y_label, &b);
    // Pixels per data unit (post-pad the two axes scale almost equally).
    let scale = (b.map_x(1.0) - b.map_x(0.0)).abs();
    if let Some(r) = ref_circle_radius {
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#b44\" \
             stroke-dasharray=\"6 4\"/>\n",
            b.map_x(0.0),
            b.map_y(0.0),
            r * scale
        ));
    }
    for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.6\" fill=\"#4668b4\" fill-opacity=\"0.5\"/>\n",
            b.map_x(x),
            b.map_y(y)
        ));
    }
    if let Some(e) = ellipse {
        let deg = -e.angle_rad.to_degrees();
        out.push_str(&format!(
            "<ellipse cx=\"{:.2}\" cy=\"{:.2}\" rx=\"{:.2}\" ry=\"{:.2}\" fill=\"none\" \
             stroke=\"#2a7\" stroke-width=\"1.6\" transform=\"rotate({:.3} {:.2} {:.2})\"/>\n",
            b.map_x(e.cx),
            b.map_y(e.cy),
            e.semi_major * scale,
            e.semi_minor * scale,
            deg,
            b.map_x(e.cx),
            b.map_y(e.cy)
        ));
    }
    out.push_str("</svg>\n");
    out
}
