//! Heatmap rendering of attributions: 24-bit ANSI for terminals and a
//! self-contained HTML page.
//!
//! Scores are divided by their largest magnitude before coloring, so the
//! strongest unit always hits an anchor color.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::shapley_engine::AttributionResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    /// WCAG relative luminance in [0, 1].
    pub fn luminance(self) -> f64 {
        let lin = |c: u8| {
            let c = c as f64 / 255.0;
            if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            }
        };
        0.2126 * lin(self.0) + 0.7152 * lin(self.1) + 0.0722 * lin(self.2)
    }

    /// Black on light backgrounds, white on dark ones.
    pub fn contrasting_text(self) -> Rgb {
        if self.luminance() > 0.5 {
            Rgb(0, 0, 0)
        } else {
            Rgb(255, 255, 255)
        }
    }
}

/// Blue–white–red diverging scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorScale {
    pub negative_anchor: Rgb,
    pub midpoint: Rgb,
    pub positive_anchor: Rgb,
}

impl ColorScale {
    /// Endpoints of matplotlib's coolwarm with a near-white midpoint.
    pub const COOLWARM: ColorScale = ColorScale {
        negative_anchor: Rgb(59, 76, 192),
        midpoint: Rgb(242, 242, 242),
        positive_anchor: Rgb(180, 4, 38),
    };
}

impl Default for ColorScale {
    fn default() -> Self {
        Self::COOLWARM
    }
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round().clamp(0.0, 255.0) as u8
}

/// Color for a signed score in [-1, 1]; values outside are clamped and NaN
/// maps to the midpoint.
pub fn color_for(value: f64, scale: &ColorScale) -> Rgb {
    let v = if value.is_nan() {
        0.0
    } else {
        value.clamp(-1.0, 1.0)
    };
    let (from, to, t) = if v >= 0.0 {
        (scale.midpoint, scale.positive_anchor, v)
    } else {
        (scale.midpoint, scale.negative_anchor, -v)
    };
    Rgb(
        lerp(from.0, to.0, t),
        lerp(from.1, to.1, t),
        lerp(from.2, to.2, t),
    )
}

/// `phi_norm / max|phi_norm|`, or all zeros when every score is zero.
pub fn scaled_scores(result: &AttributionResult) -> Vec<f64> {
    let peak = result.phi_norm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return vec![0.0; result.phi_norm.len()];
    }
    result.phi_norm.iter().map(|v| v / peak).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct AnsiOptions {
    /// Visible columns per line.
    pub width: usize,
    /// Off: plain text with the normalized score after each unit.
    pub color: bool,
    pub scale: ColorScale,
}

impl Default for AnsiOptions {
    fn default() -> Self {
        Self {
            width: 80,
            color: true,
            scale: ColorScale::COOLWARM,
        }
    }
}

pub fn render_ansi(result: &AttributionResult) -> String {
    render_ansi_with(result, &AnsiOptions::default())
}

/// Lays units out left to right, wrapping at `width` visible columns. With
/// color on, each unit gets exactly one SGR set sequence and one reset.
pub fn render_ansi_with(result: &AttributionResult, options: &AnsiOptions) -> String {
    let scaled = scaled_scores(result);
    let mut out = String::new();
    let mut column = 0;
    for ((unit, &value), &phi) in result.units.units().iter().zip(&scaled).zip(&result.phi_norm) {
        let label = if options.color {
            unit.clone()
        } else {
            format!("{unit}[{phi:+.3}]")
        };
        let visible = label.chars().count();
        if column > 0 && column + 1 + visible > options.width {
            out.push('\n');
            column = 0;
        } else if column > 0 {
            out.push(' ');
            column += 1;
        }
        if options.color {
            let bg = color_for(value, &options.scale);
            let fg = bg.contrasting_text();
            let _ = write!(
                out,
                "\x1b[38;2;{};{};{};48;2;{};{};{}m{label}\x1b[0m",
                fg.0, fg.1, fg.2, bg.0, bg.1, bg.2
            );
        } else {
            out.push_str(&label);
        }
        column += visible;
    }
    out.push('\n');
    out
}

pub fn escape_html(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:system-ui,sans-serif;margin:2em;max-width:60em;color:#222}\
.prompt{font-size:1.25em;line-height:2.2em}\
.tok{padding:0.15em 0.3em;border-radius:0.25em}\
.legend{display:flex;gap:0.5em;align-items:center;margin:1.5em 0;font-size:0.9em}\
.legend div{width:12em;height:0.8em;border-radius:0.2em}\
footer{margin-top:2em;font-size:0.85em;color:#555}\
footer dt{font-weight:bold;float:left;clear:left;width:9em}\
footer dd{margin-left:9em}";

/// Standalone HTML heatmap. Output depends only on `result`.
pub fn render_html(result: &AttributionResult) -> String {
    let scale = ColorScale::COOLWARM;
    let scaled = scaled_scores(result);
    let rgb = |c: Rgb| format!("rgb({},{},{})", c.0, c.1, c.2);

    let mut html = String::new();
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    html.push_str("<title>Token attribution</title>\n");
    let _ = writeln!(html, "<style>{STYLE}</style>");
    html.push_str("</head>\n<body>\n<h1>Token attribution</h1>\n<div class=\"prompt\">\n");
    for ((unit, &value), &phi) in result.units.units().iter().zip(&scaled).zip(&result.phi_norm) {
        let bg = color_for(value, &scale);
        let _ = writeln!(
            html,
            "<span class=\"tok\" style=\"background:{};color:{}\" title=\"{:.4}\">{}</span>",
            rgb(bg),
            rgb(bg.contrasting_text()),
            phi,
            escape_html(unit)
        );
    }
    html.push_str("</div>\n");
    let _ = writeln!(
        html,
        "<div class=\"legend\">low<div style=\"background:linear-gradient(to right,{},{},{})\"></div>high</div>",
        rgb(scale.negative_anchor),
        rgb(scale.midpoint),
        rgb(scale.positive_anchor)
    );
    html.push_str("<footer>\n<dl>\n");
    let meta = &result.meta;
    let fields = [
        ("backend", meta.backend.clone()),
        ("splitter", result.units.splitter_id().to_string()),
        ("units", result.units.len().to_string()),
        ("ratio", meta.ratio.to_string()),
        ("seed", meta.seed.to_string()),
        ("plan size", meta.plan_size.to_string()),
        ("model calls", meta.model_calls.to_string()),
        ("normalization", result.normalization.to_string()),
        ("rng", meta.rng.to_string()),
    ];
    for (k, v) in fields {
        let _ = writeln!(html, "<dt>{}</dt><dd>{}</dd>", k, escape_html(&v));
    }
    html.push_str("</dl>\n</footer>\n</body>\n</html>\n");
    html
}

pub fn write_html(result: &AttributionResult, out_path: &Path) -> std::io::Result<()> {
    std::fs::write(out_path, render_html(result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: ColorScale = ColorScale::COOLWARM;

    #[test]
    fn anchors_and_midpoint() {
        assert_eq!(color_for(0.0, &S), Rgb(242, 242, 242));
        assert_eq!(color_for(1.0, &S), Rgb(180, 4, 38));
        assert_eq!(color_for(-1.0, &S), Rgb(59, 76, 192));
        assert_eq!(color_for(0.5, &S), Rgb(211, 123, 140));
        assert_eq!(color_for(7.0, &S), color_for(1.0, &S));
        assert_eq!(color_for(f64::NAN, &S), S.midpoint);
    }

    #[test]
    fn text_contrast() {
        assert_eq!(S.midpoint.contrasting_text(), Rgb(0, 0, 0));
        assert_eq!(S.positive_anchor.contrasting_text(), Rgb(255, 255, 255));
        assert_eq!(S.negative_anchor.contrasting_text(), Rgb(255, 255, 255));
    }

    #[test]
    fn escaping() {
        assert_eq!(
            escape_html("<b>\"x\" & 'y'"),
            "&lt;b&gt;&quot;x&quot; &amp; &#39;y&#39;"
        );
    }

    proptest! {
        #[test]
        fn monotone_per_half(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (p, q) = (color_for(lo, &S), color_for(hi, &S));
            // Positive half heads toward (180, 4, 38): every channel falls.
            prop_assert!(q.0 <= p.0 && q.1 <= p.1 && q.2 <= p.2);
            let (p, q) = (color_for(-lo, &S), color_for(-hi, &S));
            // Negative half heads toward (59, 76, 192): every channel falls.
            prop_assert!(q.0 <= p.0 && q.1 <= p.1 && q.2 <= p.2);
        }

        #[test]
        fn continuous_at_zero(e in 0.0f64..1e-4) {
            let (p, m) = (color_for(e, &S), color_for(-e, &S));
            prop_assert!((p.0 as i32 - m.0 as i32).abs() <= 1);
            prop_assert!((p.1 as i32 - m.1 as i32).abs() <= 1);
            prop_assert!((p.2 as i32 - m.2 as i32).abs() <= 1);
        }
    }
}
