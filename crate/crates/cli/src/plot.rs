//! Minimal static SVG charts.

use std::fmt::Write;

use drvc::engine::trainer::StepRecord;
use drvc::eval::EvalReport;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 7] = ["#222222", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(svg: &mut String, y_lo: f64, y_hi: f64, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>",
        b = H - PAD,
        r = W - PAD
    );
    for (v, y) in [(y_hi, PAD), (y_lo, H - PAD)] {
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{y}\" text-anchor=\"end\">{v:.3}</text>", PAD - 4.0);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>", W / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{y_label}</text>",
        H / 2.0,
        H / 2.0
    );
}

/// Log-scale curves of the total and each enabled term against step.
pub fn loss_curve(records: &[StepRecord]) -> String {
    let mut svg = header("training losses (log10)");
    let names = ["total", "cycle", "identity", "same-content", "same-style", "domain", "adversarial"];
    let series: Vec<(&str, Vec<(f64, f64)>)> = names
        .iter()
        .map(|&n| {
            let pts = records
                .iter()
                .filter_map(|r| {
                    let v = if n == "total" { Some(r.losses.total) } else { r.losses.get(n) };
                    v.filter(|v| *v > 0.0).map(|v| (r.step as f64, v.log10()))
                })
                .collect();
            (n, pts)
        })
        .filter(|(_, pts): &(&str, Vec<(f64, f64)>)| !pts.is_empty())
        .collect();
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_hi, mut y_lo, mut y_hi) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-9 {
        y_hi = y_lo + 1.0;
    }
    axes(&mut svg, y_lo, y_hi, "step", "log10 loss");
    let sx = |x: f64| PAD + x / x_hi * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>",
            W - PAD - 90.0,
            PAD + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bars for overall, identity and cross-speaker mean MCD with std whiskers.
pub fn mcd_bars(report: &EvalReport) -> String {
    let mut svg = header("mel-cepstral distortion (dB)");
    let mut bars = vec![("all", report.overall.mean_mcd, report.overall.std)];
    if let Some(s) = report.identity {
        bars.push(("identity", s.mean_mcd, s.std));
    }
    if let Some(s) = report.cross {
        bars.push(("cross", s.mean_mcd, s.std));
    }
    let y_hi = bars.iter().map(|(_, m, s)| m + s).fold(1e-9, f64::max) * 1.1;
    axes(&mut svg, 0.0, y_hi, "", "MCD (dB)");
    let slot = (W - 2.0 * PAD) / bars.len() as f64;
    let sy = |y: f64| H - PAD - y / y_hi * (H - 2.0 * PAD);
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let x = PAD + slot * (i as f64 + 0.2);
        let w = slot * 0.6;
        let color = COLORS[(i + 1) % COLORS.len()];
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{w:.1}\" height=\"{:.1}\" fill=\"{color}\"/>",
            sy(*mean),
            H - PAD - sy(*mean)
        );
        let cx = x + w / 2.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            sy(mean - std),
            sy(mean + std)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label} {mean:.2}</text>",
            H - PAD + 14.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use drvc::eval::{MCDResult, PairScore};
    use drvc::losses::LossReport;

    #[test]
    fn curve_is_well_formed() {
        let records: Vec<StepRecord> = (1..=5)
            .map(|s| StepRecord {
                step: s,
                epoch: 0,
                losses: LossReport {
                    cycle: Some(1.0 / s as f64),
                    total: 10.0 / s as f64,
                    ..Default::default()
                },
                lambda_grl: 0.0,
                lr: 1e-4,
            })
            .collect();
        let svg = loss_curve(&records);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn bars_cover_subsets() {
        let p = |s: &str, t: &str, v| PairScore {
            source: s.into(),
            target: t.into(),
            mcd: v,
            aligned_len: 3,
        };
        let r = EvalReport::from_result(MCDResult::from_scores(vec![p("a/1", "a/1", 2.0), p("a/1", "b/1", 6.0)]).unwrap());
        let svg = mcd_bars(&r);
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert!(svg.contains("identity 2.00") && svg.contains("cross 6.00"));
    }
}
