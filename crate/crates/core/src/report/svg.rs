//! A very small SVG writer and the grouped bar chart built on it.

use std::fmt::Write as _;

pub const PLOT_TOP: f64 = 60.0;
pub const PLOT_HEIGHT: f64 = 280.0;
const PLOT_LEFT: f64 = 70.0;
const GROUP_WIDTH: f64 = 110.0;
const BAR_WIDTH: f64 = 34.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Coordinates are written with two decimals so output is stable.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    /// Extra attributes go in verbatim after escaping their values.
    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, attrs: &[(&str, String)]) {
        let _ = write!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}""#,
            px(x),
            px(y),
            px(w),
            px(h)
        );
        for (k, v) in attrs {
            let _ = write!(self.body, r#" {k}="{}""#, escape(v));
        }
        self.body.push_str("/>\n");
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="1.5"/>"#,
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size}">{}</text>"#,
            px(x),
            px(y),
            escape(content)
        );
    }

    /// `--` may not appear inside an XML comment.
    pub fn comment(&mut self, content: &str) {
        let _ = writeln!(self.body, "<!--\n{}\n-->", content.replace("--", "- -"));
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = px(self.width),
            h = px(self.height),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub series: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

/// Height in pixels of a bar for an accuracy on the fixed [0, 1] axis.
pub fn bar_height(mean: f64) -> f64 {
    mean.clamp(0.0, 1.0) * PLOT_HEIGHT
}

fn y_of(v: f64) -> f64 {
    PLOT_TOP + PLOT_HEIGHT - bar_height(v)
}

/// Grouped bars with ±std error bars. Each bar carries its exact values as
/// `data-*` attributes and the whole table is repeated in a comment block.
pub fn grouped_bar_chart(
    title: &str,
    y_label: &str,
    series: &[(&str, &str)],
    groups: &[BarGroup],
) -> String {
    let width = PLOT_LEFT + GROUP_WIDTH * groups.len().max(1) as f64 + 40.0;
    let height = PLOT_TOP + PLOT_HEIGHT + 70.0;
    let mut svg = Svg::new(width, height);

    let mut data = String::from("data\ngroup,series,mean,std");
    for g in groups {
        for b in &g.bars {
            let _ = write!(data, "\n{},{},{},{}", g.label, b.series, b.mean, b.std);
        }
    }
    svg.comment(&data);

    svg.text(width / 2.0, 24.0, "middle", 15, title);
    let plot_right = width - 30.0;
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = y_of(v);
        svg.line(PLOT_LEFT - 4.0, y, plot_right, y, "#dddddd");
        svg.text(PLOT_LEFT - 8.0, y + 4.0, "end", 11, &format!("{v:.1}"));
    }
    svg.line(
        PLOT_LEFT,
        PLOT_TOP,
        PLOT_LEFT,
        PLOT_TOP + PLOT_HEIGHT,
        "black",
    );
    svg.line(
        PLOT_LEFT,
        PLOT_TOP + PLOT_HEIGHT,
        plot_right,
        PLOT_TOP + PLOT_HEIGHT,
        "black",
    );
    svg.text(18.0, PLOT_TOP - 12.0, "start", 11, y_label);

    for (gi, g) in groups.iter().enumerate() {
        let left = PLOT_LEFT
            + gi as f64 * GROUP_WIDTH
            + (GROUP_WIDTH - BAR_WIDTH * g.bars.len() as f64) / 2.0;
        for (bi, b) in g.bars.iter().enumerate() {
            let color = series
                .iter()
                .find(|(name, _)| *name == b.series)
                .map(|(_, c)| *c)
                .unwrap_or("#7f7f7f");
            let x = left + bi as f64 * BAR_WIDTH;
            svg.rect(
                x + 2.0,
                y_of(b.mean),
                BAR_WIDTH - 4.0,
                bar_height(b.mean),
                color,
                &[
                    ("data-group", g.label.clone()),
                    ("data-series", b.series.clone()),
                    ("data-mean", b.mean.to_string()),
                    ("data-std", b.std.to_string()),
                ],
            );
            let cx = x + BAR_WIDTH / 2.0;
            let (lo, hi) = (y_of(b.mean - b.std), y_of(b.mean + b.std));
            svg.line(cx, lo, cx, hi, "black");
            svg.line(cx - 5.0, lo, cx + 5.0, lo, "black");
            svg.line(cx - 5.0, hi, cx + 5.0, hi, "black");
        }
        svg.text(
            PLOT_LEFT + (gi as f64 + 0.5) * GROUP_WIDTH,
            PLOT_TOP + PLOT_HEIGHT + 18.0,
            "middle",
            11,
            &g.label,
        );
    }

    for (i, (name, color)) in series.iter().enumerate() {
        let y = height - 26.0;
        let x = PLOT_LEFT + i as f64 * 200.0;
        svg.rect(x, y - 10.0, 12.0, 12.0, color, &[]);
        svg.text(x + 18.0, y, "start", 12, name);
    }
    svg.finish()
}

/// Parses the `data-*` attributes of every bar back out of a chart.
pub fn parse_bars(svg: &str) -> Vec<(String, String, f64, f64, f64)> {
    let attr = |tag: &str, key: &str| -> Option<String> {
        let pat = format!(" {key}=\"");
        let start = tag.find(&pat)? + pat.len();
        let end = tag[start..].find('"')? + start;
        Some(
            tag[start..end]
                .replace("&quot;", "\"")
                .replace("&gt;", ">")
                .replace("&lt;", "<")
                .replace("&amp;", "&"),
        )
    };
    svg.lines()
        .filter(|l| l.starts_with("<rect") && l.contains("data-group"))
        .filter_map(|l| {
            Some((
                attr(l, "data-group")?,
                attr(l, "data-series")?,
                attr(l, "data-mean")?.parse().ok()?,
                attr(l, "data-std")?.parse().ok()?,
                attr(l, "height")?.parse().ok()?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(std: f64) -> String {
        grouped_bar_chart(
            "t",
            "Accuracy",
            &[("Deterministic", "#1f77b4"), ("Baseline MC", "#ff7f0e")],
            &[BarGroup {
                label: "m<1>".into(),
                bars: vec![
                    Bar {
                        series: "Deterministic".into(),
                        mean: 0.735,
                        std: 0.0,
                    },
                    Bar {
                        series: "Baseline MC".into(),
                        mean: 0.497,
                        std,
                    },
                ],
            }],
        )
    }

    #[test]
    fn bars_round_trip_and_escape() {
        let s = chart(0.0314);
        let bars = parse_bars(&s);
        assert_eq!(bars.len(), 2);
        assert_eq!(bars[0].0, "m<1>");
        assert_eq!(bars[1].2, 0.497);
        assert_eq!(
            format!("{:.2}", bar_height(0.497)),
            format!("{:.2}", bars[1].4)
        );
        assert!(s.contains("m&lt;1&gt;"));
        assert_eq!(s, chart(0.0314));
    }

    #[test]
    fn zero_std_gives_zero_length_error_bar() {
        let s = chart(0.0);
        let y = px(y_of(0.735));
        assert!(
            s.contains(&format!(r#"y1="{y}" x2="#)) && s.contains(&format!(r#"y2="{y}" stroke"#))
        );
    }
}
