use std::fmt::Write as _;

use crate::corpus::synth::MonthWindow;

use super::UserCorrelation;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 56.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

fn axis_max(values: impl Iterator<Item = f64>) -> f64 {
    let m = values.fold(0.0f64, f64::max);
    if m > 0.0 {
        m * 1.1
    } else {
        1.0
    }
}

fn polyline(out: &mut String, values: &[f64], max: f64, color: &str, dash: &str) {
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = LEFT + plot_w * i as f64 / 11.0;
            let y = TOP + plot_h * (1.0 - v / max);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    writeln!(
        out,
        r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
        points.join(" ")
    )
    .expect("String write");
}

/// Line chart of one user's monthly series: hit counts of visible and
/// hidden posts on the left axis, summed attention on the right axis.
pub fn series_svg(user: &UserCorrelation, window: &MonthWindow) -> String {
    let plot_h = HEIGHT - TOP - BOTTOM;
    let plot_w = WIDTH - LEFT - RIGHT;
    let count_max = axis_max(user.v_n.iter().chain(&user.v_h).copied());
    let att_max = axis_max(user.v_a.iter().copied());
    let rho = |r: Option<f64>| r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .expect("String write");
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("String write");
    writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{} (rho_nh={}, rho_ah={})</text>"#,
        WIDTH / 2.0,
        user.user_id,
        rho(user.rho_nh),
        rho(user.rho_ah)
    )
    .expect("String write");
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, TOP + plot_h);
    writeln!(
        s,
        r#"<path d="M{x0},{y0} V{y1} H{x1} V{y0}" fill="none" stroke="black"/>"#
    )
    .expect("String write");
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let y = y1 - plot_h * f;
        writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.1}</text><text x="{}" y="{:.1}">{:.2}</text>"#,
            x0 - 4.0,
            y + 4.0,
            count_max * f,
            x1 + 4.0,
            y + 4.0,
            att_max * f
        )
        .expect("String write");
    }
    for m in 0..12 {
        let x = LEFT + plot_w * m as f64 / 11.0;
        writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y1 + 16.0,
            &window.label(m)[2..]
        )
        .expect("String write");
    }
    writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">risk-word count</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    )
    .expect("String write");
    writeln!(
        s,
        r#"<text x="{0:.1}" y="{1:.1}" transform="rotate(90 {0:.1} {1:.1})" text-anchor="middle">attention weight</text>"#,
        WIDTH - 12.0,
        TOP + plot_h / 2.0
    )
    .expect("String write");
    polyline(&mut s, &user.v_n, count_max, "#1f77b4", "");
    polyline(&mut s, &user.v_h, count_max, "#d62728", "");
    polyline(&mut s, &user.v_a, att_max, "#2ca02c", r#" stroke-dasharray="5,3""#);
    let legend = [("#1f77b4", "normal posts"), ("#d62728", "hidden posts"), ("#2ca02c", "attention")];
    for (i, (color, name)) in legend.iter().enumerate() {
        let x = LEFT + 10.0 + 130.0 * i as f64;
        let y = HEIGHT - 12.0;
        writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            x + 20.0,
            x + 24.0,
            y + 4.0
        )
        .expect("String write");
    }
    s.push_str("</svg>\n");
    s
}
