use std::fmt::Write;

use super::report::EvalRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#e8710a", "#1a73e8", "#188038", "#d93025", "#9334e6", "#5f6368"];

fn color_for(method: &str, index: usize) -> &'static str {
    match method {
        "sortrl" => COLORS[0],
        "teacher" => COLORS[1],
        _ => COLORS[(index + 2) % COLORS.len()],
    }
}

fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|c| *c >= v).unwrap_or(10.0 * mag)
}

/// Mean reward against ε, one line per method with a ±1 SE band.
pub fn render_svg(rows: &[EvalRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let x_min = rows.iter().map(|r| r.eps).fold(f64::INFINITY, f64::min);
    let x_max = rows.iter().map(|r| r.eps).fold(f64::NEG_INFINITY, f64::max);
    let (x_min, x_max) = if rows.is_empty() { (0.0, 1.0) } else if x_max > x_min { (x_min, x_max) } else { (x_min, x_min + 1.0) };
    let y_top = nice_ceiling(rows.iter().map(|r| r.mean_reward + r.std_err).fold(0.0, f64::max));
    let y_bot = rows.iter().map(|r| r.mean_reward - r.std_err).fold(0.0f64, f64::min);
    let y_bot = if y_bot < 0.0 { -nice_ceiling(-y_bot) } else { 0.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| TOP + (y_top - y) / (y_top - y_bot) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let y = y_bot + (y_top - y_bot) * i as f64 / 5.0;
        let yy = py(y);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0,
            y
        );
    }
    let mut ticks: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in &ticks {
        let xx = px(*x);
        let _ = writeln!(
            s,
            r#"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="black"/><text x="{xx:.2}" y="{:.2}" text-anchor="middle">{x:.2}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 19.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">perturbation budget ε (l∞, normalized)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">mean episode reward</text>"#,
        TOP + plot_h / 2.0
    );
    for (i, m) in methods.iter().enumerate() {
        let color = color_for(m, i);
        let mut pts: Vec<&EvalRow> = rows.iter().filter(|r| r.method == *m).collect();
        pts.sort_by(|a, b| a.eps.total_cmp(&b.eps));
        let upper = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.eps), py(r.mean_reward + r.std_err)));
        let lower = pts.iter().rev().map(|r| format!("{:.2},{:.2}", px(r.eps), py(r.mean_reward - r.std_err)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon class="band" data-method="{m}" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.eps), py(r.mean_reward))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-method="{m}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{m}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
