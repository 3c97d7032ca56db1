//! Static SVG line charts built from metrics rows.

use std::fmt::Write;
use std::path::Path;

use anyhow::{Context, Result};
use mardpg_core::train::MetricsRow;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 40.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn bounds(panel: &Panel) -> Option<(f64, f64, f64, f64)> {
    let pts = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    b.map(|(x0, mut x1, mut y0, mut y1)| {
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        (x0, x1, y0 - pad, y1 + pad)
    })
}

/// Panels stacked vertically, sharing an x label.
pub fn render(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let height = panels.len() as f64 * PANEL_HEIGHT + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (k, panel) in panels.iter().enumerate() {
        let top = 30.0 + k as f64 * PANEL_HEIGHT;
        draw_panel(&mut s, panel, top, x_label);
    }
    s.push_str("</svg>\n");
    s
}

fn draw_panel(s: &mut String, panel: &Panel, top: f64, x_label: &str) {
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y_top, y_bottom) = (top + MARGIN_TOP, top + PANEL_HEIGHT - MARGIN_BOTTOM);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        (left + right) / 2.0,
        top + 20.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{y_top}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        right - left,
        y_bottom - y_top
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        y_bottom + 30.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y_top + y_bottom) / 2.0,
        escape(&panel.y_label)
    );
    let Some((x0, x1, y0, y1)) = bounds(panel) else {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
            (left + right) / 2.0,
            (y_top + y_bottom) / 2.0
        );
        return;
    };
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| y_bottom - (y - y0) / (y1 - y0) * (y_bottom - y_top);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            y_bottom + 14.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 4.0,
            py(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{right}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            y = py(yv)
        );
    }
    for (k, series) in panel.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        // NaN values break the line into separate segments.
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, s: &mut String| {
            if segment.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    segment.join(" ")
                );
            }
            segment.clear();
        };
        for &(x, y) in &series.points {
            if x.is_finite() && y.is_finite() {
                segment.push(format!("{:.1},{:.1}", px(x), py(y)));
            } else {
                flush(&mut segment, s);
            }
        }
        flush(&mut segment, s);
        let ly = y_top + 12.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            right + 10.0,
            right + 28.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            right + 32.0,
            ly + 4.0,
            escape(&series.name)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn series(name: &str, rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> Series {
    Series {
        name: name.to_string(),
        points: rows.iter().map(|r| (r.epoch as f64, f(r))).collect(),
    }
}

/// Reward and critic-loss curves.
pub fn curves_svg(rows: &[MetricsRow]) -> String {
    let variant = rows.first().map(|r| r.variant.as_str()).unwrap_or("");
    render(
        &format!("Training progress ({variant})"),
        "epoch",
        &[
            Panel {
                title: "Evaluation reward per episode".into(),
                y_label: "reward".into(),
                series: vec![
                    series("total", rows, |r| r.mean_total_reward),
                    series("main search", rows, |r| r.reward_main),
                    series("store search", rows, |r| r.reward_store),
                ],
            },
            Panel {
                title: "Smoothed critic loss".into(),
                y_label: "loss".into(),
                series: vec![series("critic loss", rows, |r| r.critic_loss)],
            },
        ],
    )
}

/// Mean action per dimension, one panel per agent.
pub fn actions_svg(rows: &[MetricsRow], agent_names: &[&str]) -> String {
    let n_agents = rows.first().map(|r| r.mean_actions.len()).unwrap_or(0);
    let panels: Vec<Panel> = (0..n_agents)
        .map(|agent| {
            let dims = rows[0].mean_actions[agent].len();
            Panel {
                title: format!(
                    "Mean action, {}",
                    agent_names.get(agent).copied().unwrap_or("agent")
                ),
                y_label: "weight".into(),
                series: (0..dims)
                    .map(|d| series(&format!("action {d}"), rows, |r| r.mean_actions[agent][d]))
                    .collect(),
            }
        })
        .collect();
    render("Average action during training", "epoch", &panels)
}

pub fn write_plots(dir: &Path, rows: &[MetricsRow]) -> Result<()> {
    let names = ["main search", "store search"];
    std::fs::write(dir.join("curves.svg"), curves_svg(rows)).context("writing curves.svg")?;
    std::fs::write(dir.join("actions.svg"), actions_svg(rows, &names)).context("writing actions.svg")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, loss: f64) -> MetricsRow {
        MetricsRow {
            variant: "ma_rdpg".into(),
            epoch,
            episodes_seen: epoch * 10,
            mean_total_reward: epoch as f64,
            reward_main: 1.0,
            reward_store: epoch as f64 - 1.0,
            critic_loss: loss,
            mean_q: 0.0,
            mean_actions: vec![vec![0.1, 0.2], vec![-0.3]],
        }
    }

    #[test]
    fn svg_has_one_line_per_series() {
        let rows = vec![row(1, f64::NAN), row(2, 0.5), row(3, 0.4)];
        let curves = curves_svg(&rows);
        assert!(curves.starts_with("<svg"));
        assert_eq!(curves.matches("<polyline").count(), 4);
        let actions = actions_svg(&rows, &["main", "store"]);
        assert_eq!(actions.matches("<polyline").count(), 3);
    }

    #[test]
    fn empty_metrics_still_render() {
        assert!(curves_svg(&[]).contains("no data"));
        assert!(actions_svg(&[], &[]).ends_with("</svg>\n"));
    }
}
