//! CSV and SVG result export. Both outputs are byte-stable for identical
//! inputs: floats are written with fixed shortest-round-trip formatting and
//! the SVG contains no timestamps or random ids.

use serde::{Deserialize, Serialize};

use skelact::error::{Error, Result};

/// One evaluated setting (e.g. a corruption severity) with recognition and
/// restoration metrics side by side.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: String,
    pub top1: f64,
    pub top5: f64,
    pub mean_class_acc: f64,
    pub mpjpe: f64,
    pub n_mpjpe: f64,
    pub mpjve: f64,
}

pub fn to_csv(reports: &[SettingReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to export".into()));
    }
    let mut out = String::from("setting,top1,top5,mean_class_acc,mpjpe,n_mpjpe,mpjve\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.setting, r.top1, r.top5, r.mean_class_acc, r.mpjpe, r.n_mpjpe, r.mpjve
        ));
    }
    Ok(out)
}

const CHART_W: f64 = 480.0;
const CHART_H: f64 = 300.0;
const MARGIN: f64 = 40.0;

/// Bar chart of top-1 accuracy per setting. Bar heights are proportional to
/// top-1 on a fixed [0, 1] axis.
pub fn to_svg(reports: &[SettingReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to plot".into()));
    }
    let plot_w = CHART_W - 2.0 * MARGIN;
    let plot_h = CHART_H - 2.0 * MARGIN;
    let n = reports.len() as f64;
    let slot = plot_w / n;
    let bar_w = (slot * 0.6).min(60.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        CHART_H - MARGIN,
        CHART_W - MARGIN,
        CHART_H - MARGIN
    ));
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        CHART_H - MARGIN
    ));
    for (i, r) in reports.iter().enumerate() {
        let h = (r.top1.clamp(0.0, 1.0)) * plot_h;
        let x = MARGIN + slot * i as f64 + (slot - bar_w) / 2.0;
        let y = CHART_H - MARGIN - h;
        svg.push_str(&format!(
            "  <rect class=\"bar\" x=\"{x:.4}\" y=\"{y:.4}\" width=\"{bar_w:.4}\" height=\"{h:.4}\" fill=\"#4878a8\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.4}\" y=\"{:.4}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            CHART_H - MARGIN + 16.0,
            r.setting
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.4}\" y=\"{:.4}\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n",
            x + bar_w / 2.0,
            y - 4.0,
            r.top1
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes both exports.
pub fn plot_export(
    reports: &[SettingReport],
    csv_path: &std::path::Path,
    svg_path: &std::path::Path,
) -> Result<()> {
    std::fs::write(csv_path, to_csv(reports)?)?;
    std::fs::write(svg_path, to_svg(reports)?)?;
    Ok(())
}

/// Parses bar heights back out of the generated SVG (test support).
pub fn svg_bar_heights(svg: &str) -> Vec<f64> {
    svg.lines()
        .filter(|l| l.contains("class=\"bar\""))
        .filter_map(|l| {
            let key = "height=\"";
            let start = l.find(key)? + key.len();
            let end = l[start..].find('"')? + start;
            l[start..end].parse().ok()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(setting: &str, top1: f64) -> SettingReport {
        SettingReport {
            setting: setting.into(),
            top1,
            top5: 1.0,
            mean_class_acc: top1,
            mpjpe: 0.1,
            n_mpjpe: 0.09,
            mpjve: 0.05,
        }
    }

    #[test]
    fn single_report_gives_two_line_csv() {
        let csv = to_csv(&[report("minor", 0.9)]).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("setting,top1,top5,mean_class_acc,mpjpe,n_mpjpe,mpjve\n"));
        assert!(csv.contains("minor,0.9,1,0.9,0.1,0.09,0.05"));
    }

    #[test]
    fn identical_inputs_give_identical_svg_bytes() {
        let rs = vec![report("a", 0.5), report("b", 0.75)];
        assert_eq!(to_svg(&rs).unwrap(), to_svg(&rs).unwrap());
    }

    #[test]
    fn three_bars_with_proportional_heights() {
        let rs = vec![report("minor", 0.9), report("moderate", 0.6), report("severe", 0.3)];
        let svg = to_svg(&rs).unwrap();
        let heights = svg_bar_heights(&svg);
        assert_eq!(heights.len(), 3);
        assert!((heights[0] / heights[2] - 3.0).abs() < 1e-6);
        assert!((heights[1] / heights[2] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(to_csv(&[]).is_err());
        assert!(to_svg(&[]).is_err());
    }
}
