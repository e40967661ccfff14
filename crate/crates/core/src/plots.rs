//! Static SVG output for training curves and sweep summaries.
//!
//! Hand-rolled SVG with fixed-precision number formatting, so re-emitting
//! from the same data is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::EpochMetrics;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn f(v: f64) -> String {
    format!("{v:.2}")
}

fn svg_header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>",
        WIDTH / 2.0
    );
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let y0 = HEIGHT - MARGIN_B;
    let x1 = WIDTH - MARGIN_R;
    let y1 = MARGIN_T;
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        f(x0),
        f(y0),
        f(x1),
        f(y0)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        f(x0),
        f(y0),
        f(x0),
        f(y1)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        f((x0 + x1) / 2.0),
        f(HEIGHT - 12.0)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        f((y0 + y1) / 2.0),
        f((y0 + y1) / 2.0)
    );
}

/// Line plot: one polyline per named series, shared x = index.
pub fn plot_curves(
    series: &[(String, Vec<f64>)],
    title: &str,
    x_label: &str,
    y_label: &str,
    path: &Path,
) -> Result<()> {
    if series.is_empty() || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyDataset("plot_curves needs nonempty series".into()));
    }
    let max_len = series.iter().map(|(_, v)| v.len()).max().unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, v) in series {
        for &y in v {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidConfig("plot series contain non-finite values".into()));
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);

    let x_of = |i: usize| {
        MARGIN_L
            + (WIDTH - MARGIN_L - MARGIN_R) * (i as f64) / ((max_len.max(2) - 1) as f64)
    };
    let y_of = |v: f64| {
        let t = (v - lo) / (hi - lo);
        HEIGHT - MARGIN_B - t * (HEIGHT - MARGIN_T - MARGIN_B)
    };

    let mut s = svg_header(title);
    axes(&mut s, x_label, y_label);
    // y tick labels at lo/hi
    for v in [lo, hi] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.4}</text>",
            f(MARGIN_L - 6.0),
            f(y_of(v) + 4.0),
            v
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
        f(x_of(max_len - 1)),
        f(HEIGHT - MARGIN_B + 16.0),
        max_len - 1
    );
    for (si, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut points = String::new();
        for (i, &v) in values.iter().enumerate() {
            let _ = write!(points, "{},{} ", f(x_of(i)), f(y_of(v)));
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        let ly = MARGIN_T + 14.0 * si as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>",
            f(WIDTH - MARGIN_R - 150.0),
            f(ly)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>",
            f(WIDTH - MARGIN_R - 135.0),
            f(ly + 9.0)
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Bar chart with one labeled bar per entry.
pub fn plot_bars(bars: &[(String, f64)], title: &str, y_label: &str, path: &Path) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::EmptyDataset("plot_bars needs at least one bar".into()));
    }
    let hi = bars.iter().map(|(_, v)| *v).fold(0.0f64, f64::max).max(1e-9);
    let mut s = svg_header(title);
    axes(&mut s, "", y_label);
    let span = WIDTH - MARGIN_L - MARGIN_R;
    let slot = span / bars.len() as f64;
    let bar_w = slot * 0.6;
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = MARGIN_L + slot * i as f64 + (slot - bar_w) / 2.0;
        let h = (value / (hi * 1.1)) * (HEIGHT - MARGIN_T - MARGIN_B);
        let y = HEIGHT - MARGIN_B - h;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>",
            f(x),
            f(y),
            f(bar_w),
            f(h)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>",
            f(x + bar_w / 2.0),
            f(HEIGHT - MARGIN_B + 16.0)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{:.4}</text>",
            f(x + bar_w / 2.0),
            f(y - 4.0),
            value
        );
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Standard per-run plot set: test-Dice-vs-epoch curves per strategy.
pub fn emit_plots(histories: &[(String, Vec<EpochMetrics>)], out_dir: &Path) -> Result<()> {
    if histories.is_empty() {
        return Err(Error::EmptyDataset("emit_plots needs at least one history".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let curves: Vec<(String, Vec<f64>)> = histories
        .iter()
        .map(|(name, h)| (name.clone(), h.iter().map(|m| m.test_dice).collect()))
        .collect();
    plot_curves(
        &curves,
        "Test Dice vs epoch",
        "epoch",
        "dice",
        &out_dir.join("dice_vs_epoch.svg"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric(epoch: usize, dice: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            lr: 0.001,
            train_loss: vec![0.5],
            selection_overlap: None,
            corrected_label_dice: None,
            test_dice: dice,
            jo_active: false,
        }
    }

    #[test]
    fn curve_emission_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let histories = vec![("ss".to_string(), vec![metric(0, 0.5), metric(1, 0.6), metric(2, 0.7)])];
        let p1 = dir.path().join("a");
        let p2 = dir.path().join("b");
        emit_plots(&histories, &p1).unwrap();
        emit_plots(&histories, &p2).unwrap();
        let a = std::fs::read(p1.join("dice_vs_epoch.svg")).unwrap();
        let b = std::fs::read(p2.join("dice_vs_epoch.svg")).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn curve_has_three_points_for_three_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        plot_curves(
            &[("x".into(), vec![0.1, 0.2, 0.3])],
            "t",
            "epoch",
            "dice",
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let points = text
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(points.split_whitespace().count(), 3);
    }

    #[test]
    fn bars_render_one_rect_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bars.svg");
        plot_bars(
            &[("0".into(), 0.8), ("0.5".into(), 0.9), ("1".into(), 0.85)],
            "alpha sweep",
            "dice",
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // one background rect + 3 bars + 3 legend-free labels
        assert_eq!(text.matches("<rect").count(), 4);
        assert!(text.contains(">0.5<"));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_bars(&[], "t", "y", &dir.path().join("x.svg")).is_err());
        assert!(plot_curves(&[], "t", "x", "y", &dir.path().join("y.svg")).is_err());
    }
}
