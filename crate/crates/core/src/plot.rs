//! Beeswarm summary plot of SHAP values as a standalone SVG.

use crate::error::{Error, Result};
use crate::explain::{GlobalImportance, ShapMatrix};
use crate::tabular::FeatureMatrix;

const ROW_HEIGHT: f64 = 28.0;
const LABEL_WIDTH: f64 = 160.0;
const PLOT_WIDTH: f64 = 520.0;
const LEGEND_WIDTH: f64 = 70.0;
const TOP: f64 = 20.0;
const AXIS_HEIGHT: f64 = 40.0;
const RADIUS: f64 = 2.2;
const MISSING_COLOUR: &str = "#9e9e9e";

pub fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Blue (low) to red (high).
fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(30.0, 230.0), lerp(136.0, 30.0), lerp(229.0, 80.0))
}

/// Vertical offsets that stack points sharing a horizontal pixel bucket
/// alternately above and below the row centre.
fn swarm_offsets(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    let limit = ROW_HEIGHT / 2.0 - RADIUS;
    let mut counts = std::collections::HashMap::new();
    let mut offsets = vec![0.0; xs.len()];
    for i in order {
        let bucket = (xs[i] / (2.0 * RADIUS)).floor() as i64;
        let n = counts.entry(bucket).or_insert(0usize);
        let step = (*n).div_ceil(2) as f64 * RADIUS * 0.9;
        let sign = if *n % 2 == 1 { -1.0 } else { 1.0 };
        offsets[i] = (sign * step).clamp(-limit, limit);
        *n += 1;
    }
    offsets
}

/// One `<g class="feature">` per plotted feature, top to bottom by
/// importance. Points sit at their SHAP value and are coloured by the
/// feature value scaled over the plotted rows; missing values are grey.
pub fn beeswarm_svg(
    shap: &ShapMatrix,
    features: &FeatureMatrix,
    importance: &GlobalImportance,
    max_features: usize,
) -> Result<String> {
    if features.n_rows != shap.n_rows() || features.feature_names != shap.feature_names {
        return Err(Error::Input("SHAP matrix and feature matrix do not match".into()));
    }
    let shown: Vec<usize> = importance
        .ranking
        .iter()
        .take(max_features)
        .map(|name| {
            shap.feature_names
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::Input(format!("ranked feature {name} not in SHAP matrix")))
        })
        .collect::<Result<_>>()?;

    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for row in &shap.values {
        for &j in &shown {
            lo = lo.min(row[j]);
            hi = hi.max(row[j]);
        }
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    let (lo, hi) = (lo - pad, hi + pad);
    let x_of = |v: f64| LABEL_WIDTH + (v - lo) / (hi - lo) * PLOT_WIDTH;

    let height = TOP + ROW_HEIGHT * shown.len() as f64 + AXIS_HEIGHT;
    let width = LABEL_WIDTH + PLOT_WIDTH + LEGEND_WIDTH;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    svg.push_str(&format!(
        "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n"
    ));
    let zero = x_of(0.0);
    svg.push_str(&format!(
        "<line x1=\"{zero:.2}\" y1=\"{TOP:.2}\" x2=\"{zero:.2}\" y2=\"{:.2}\" stroke=\"#cccccc\"/>\n",
        height - AXIS_HEIGHT
    ));

    for (slot, &j) in shown.iter().enumerate() {
        let centre = TOP + ROW_HEIGHT * (slot as f64 + 0.5);
        let name = escape_xml(&shap.feature_names[j]);
        svg.push_str(&format!("<g class=\"feature\" data-feature=\"{name}\">\n"));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{name}</text>\n",
            LABEL_WIDTH - 8.0,
            centre + 4.0
        ));
        let column = features.column(j);
        let finite = column.iter().copied().filter(|v| !v.is_nan());
        let (vmin, vmax) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let xs: Vec<f64> = shap.values.iter().map(|r| x_of(r[j])).collect();
        for ((&x, dy), &v) in xs.iter().zip(swarm_offsets(&xs)).zip(&column) {
            let fill = if v.is_nan() {
                MISSING_COLOUR.to_string()
            } else if vmax > vmin {
                colour((v - vmin) / (vmax - vmin))
            } else {
                colour(0.5)
            };
            svg.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"{RADIUS}\" fill=\"{fill}\" fill-opacity=\"0.8\"/>\n",
                centre + dy
            ));
        }
        svg.push_str("</g>\n");
    }

    let axis_y = height - AXIS_HEIGHT;
    svg.push_str(&format!(
        "<line x1=\"{LABEL_WIDTH:.2}\" y1=\"{axis_y:.2}\" x2=\"{:.2}\" y2=\"{axis_y:.2}\" stroke=\"black\"/>\n",
        LABEL_WIDTH + PLOT_WIDTH
    ));
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let x = x_of(v);
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.3}</text>\n",
            axis_y + 14.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">SHAP value (impact on log-odds of death)</text>\n",
        LABEL_WIDTH + PLOT_WIDTH / 2.0,
        axis_y + 32.0
    ));
    let lx = LABEL_WIDTH + PLOT_WIDTH + 20.0;
    svg.push_str(&format!(
        "<defs><linearGradient id=\"value\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\
         <stop offset=\"0\" stop-color=\"{}\"/><stop offset=\"1\" stop-color=\"{}\"/></linearGradient></defs>\n",
        colour(0.0),
        colour(1.0)
    ));
    svg.push_str(&format!(
        "<rect x=\"{lx:.2}\" y=\"{TOP:.2}\" width=\"10\" height=\"{:.2}\" fill=\"url(#value)\"/>\n",
        (axis_y - TOP).max(10.0)
    ));
    svg.push_str(&format!("<text x=\"{:.2}\" y=\"{:.2}\">high</text>\n", lx + 14.0, TOP + 10.0));
    svg.push_str(&format!("<text x=\"{:.2}\" y=\"{axis_y:.2}\">low</text>\n", lx + 14.0));
    svg.push_str("</svg>\n");
    Ok(svg)
}
