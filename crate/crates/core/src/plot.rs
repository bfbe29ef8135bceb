//! SVG charts of aggregated bias against K.
//!
//! One file per (dataset, variant, source): a grid of panels with one column
//! per country and one row per unlabeled-track policy. Each panel draws the
//! mean bias of every model with a ±1 standard deviation band and a dotted
//! zero line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bias::{AggregateRecord, ModelKind, Variant};
use crate::corpus::Country;
use crate::error::{Error, Result};
use crate::locality::{LabelSource, UnlabeledPolicy};

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;
const HEADER_H: f64 = 40.0;
const LEGEND_W: f64 = 120.0;

fn model_color(model: ModelKind) -> &'static str {
    match model {
        ModelKind::ItemKnn => "#1f77b4",
        ModelKind::NeuMf => "#d62728",
    }
}

/// A rendered chart and the file name it should be written under.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub file_name: String,
    pub svg: String,
}

type FigureKey = (String, Variant, LabelSource);
type PanelKey = (UnlabeledPolicy, Country);
type Series = BTreeMap<ModelKind, Vec<(usize, f64, f64)>>;

/// Renders every figure of an aggregate table, in key order.
pub fn render(rows: &[AggregateRecord]) -> Result<Vec<Chart>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("aggregate has no rows to plot".into()));
    }
    let mut figures: BTreeMap<FigureKey, BTreeMap<PanelKey, Series>> = BTreeMap::new();
    for r in rows {
        let k = &r.key;
        figures
            .entry((k.dataset.clone(), k.variant, k.source))
            .or_default()
            .entry((k.policy, k.country))
            .or_default()
            .entry(k.model)
            .or_default()
            .push((k.k, r.mean, r.std.unwrap_or(0.0)));
    }
    Ok(figures
        .into_iter()
        .map(|((dataset, variant, source), panels)| Chart {
            file_name: format!("bias_{dataset}_{variant}_{source}.svg"),
            svg: figure(&format!("{dataset}: {variant} models, {source} labels"), &panels),
        })
        .collect())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn figure(title: &str, panels: &BTreeMap<PanelKey, Series>) -> String {
    let mut policies: Vec<UnlabeledPolicy> = panels.keys().map(|(p, _)| *p).collect();
    policies.dedup();
    let mut countries: Vec<Country> = panels.keys().map(|(_, c)| *c).collect();
    countries.sort();
    countries.dedup();
    let models: Vec<ModelKind> = {
        let mut m: Vec<ModelKind> = panels.values().flat_map(|s| s.keys().copied()).collect();
        m.sort();
        m.dedup();
        m
    };

    let width = countries.len() as f64 * PANEL_W + LEGEND_W;
    let height = HEADER_H + policies.len() as f64 * PANEL_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="8" y="24" font-size="15">{}</text>"#, escape(title));

    for (row, policy) in policies.iter().enumerate() {
        for (col, country) in countries.iter().enumerate() {
            let x0 = col as f64 * PANEL_W;
            let y0 = HEADER_H + row as f64 * PANEL_H;
            if let Some(series) = panels.get(&(*policy, *country)) {
                panel(&mut svg, x0, y0, &format!("{country} ({policy})"), series);
            }
        }
    }

    let lx = countries.len() as f64 * PANEL_W + 8.0;
    for (i, m) in models.iter().enumerate() {
        let y = HEADER_H + MARGIN_T + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="14" height="10" fill="{c}" fill-opacity="0.25" stroke="{c}"/><text x="{}" y="{}">{m}</text>"#,
            y - 9.0,
            lx + 20.0,
            y,
            c = model_color(*m)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn panel(svg: &mut String, x0: f64, y0: f64, title: &str, series: &Series) {
    let mut ks: Vec<usize> = series.values().flatten().map(|p| p.0).collect();
    ks.sort_unstable();
    ks.dedup();
    let (k_min, k_max) = (ks[0] as f64, *ks.last().expect("non-empty") as f64);

    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for &(_, mean, std) in series.values().flatten() {
        lo = lo.min(mean - std);
        hi = hi.max(mean + std);
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    let (lo, hi) = (lo - pad, hi + pad);

    let left = x0 + MARGIN_L;
    let right = x0 + PANEL_W - MARGIN_R;
    let top = y0 + MARGIN_T;
    let bottom = y0 + PANEL_H - MARGIN_B;
    let sx = |k: f64| {
        if k_max > k_min {
            left + (k - k_min) / (k_max - k_min) * (right - left)
        } else {
            (left + right) / 2.0
        }
    };
    let sy = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);

    let _ = writeln!(svg, r#"<g class="panel">"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12">{}</text>"#,
        left,
        top - 10.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        right - left,
        bottom - top
    );

    for &k in &ks {
        let x = sx(k as f64);
        let _ = writeln!(
            svg,
            r##"<line class="xtick" x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="#444"/><text x="{x:.2}" y="{}" text-anchor="middle" font-size="9">{k}</text>"##,
            bottom + 4.0,
            bottom + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">K</text>"#,
        (left + right) / 2.0,
        bottom + 32.0
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="#444"/><text x="{}" y="{:.2}" text-anchor="end" font-size="9">{v:.3}</text>"##,
            left - 4.0,
            left - 6.0,
            y + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate({},{}) rotate(-90)" text-anchor="middle">bias</text>"#,
        x0 + 14.0,
        (top + bottom) / 2.0
    );

    let zero = sy(0.0);
    let _ = writeln!(
        svg,
        r##"<line class="zero" x1="{left}" y1="{zero:.2}" x2="{right}" y2="{zero:.2}" stroke="#000" stroke-dasharray="2,3"/><text x="{}" y="{:.2}" text-anchor="end" font-size="9">No bias</text>"##,
        right - 4.0,
        zero - 4.0
    );

    for (model, points) in series {
        let mut points = points.clone();
        points.sort_by_key(|p| p.0);
        let color = model_color(*model);
        let upper = points
            .iter()
            .map(|&(k, m, s)| format!("{:.2},{:.2}", sx(k as f64), sy(m + s)));
        let lower = points
            .iter()
            .rev()
            .map(|&(k, m, s)| format!("{:.2},{:.2}", sx(k as f64), sy(m - s)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="band" data-model="{model}" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = points
            .iter()
            .map(|&(k, m, _)| format!("{:.2},{:.2}", sx(k as f64), sy(m)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" data-model="{model}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
    }
    let _ = writeln!(svg, "</g>");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::RecordKey;

    fn row(model: ModelKind, country: &str, k: usize, mean: f64, std: Option<f64>) -> AggregateRecord {
        AggregateRecord {
            key: RecordKey {
                dataset: "d".into(),
                country: country.parse().unwrap(),
                model,
                variant: Variant::Local,
                source: LabelSource::Activity,
                policy: UnlabeledPolicy::ExcludeUnlabeled,
                k,
            },
            mean,
            std,
            n_runs: 2,
        }
    }

    fn attr_points(svg: &str, class: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.contains(&format!(r#"class="{class}""#)))
            .map(|l| {
                let start = l.find("points=\"").unwrap() + 8;
                let end = start + l[start..].find('"').unwrap();
                l[start..end]
                    .split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    fn zero_y(svg: &str) -> f64 {
        let l = svg.lines().find(|l| l.contains(r#"class="zero""#)).unwrap();
        let start = l.find("y1=\"").unwrap() + 4;
        l[start..start + l[start..].find('"').unwrap()].parse().unwrap()
    }

    #[test]
    fn single_key_gives_one_curve_and_band() {
        let charts = render(&[row(ModelKind::ItemKnn, "FR", 10, 0.2, None)]).unwrap();
        assert_eq!(charts.len(), 1);
        assert_eq!(charts[0].file_name, "bias_d_local_activity.svg");
        assert_eq!(attr_points(&charts[0].svg, "mean").len(), 1);
        assert_eq!(attr_points(&charts[0].svg, "band").len(), 1);
        assert!(charts[0].svg.contains("No bias"));
    }

    #[test]
    fn positive_means_stay_above_zero_line() {
        let rows: Vec<_> = (0..19)
            .map(|i| row(ModelKind::NeuMf, "FR", 10 + 5 * i, 0.1 + 0.01 * i as f64, Some(0.05)))
            .collect();
        let charts = render(&rows).unwrap();
        let svg = &charts[0].svg;
        let zero = zero_y(svg);
        // SVG y grows downward.
        for band in attr_points(svg, "band") {
            assert!(band.iter().all(|&(_, y)| y < zero));
        }
        let ticks: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="xtick""#)).collect();
        assert_eq!(ticks.len(), 19);
        assert!(ticks[0].contains(">10</text>"));
        assert!(ticks[18].contains(">100</text>"));
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        assert!(render(&[]).is_err());
    }

    #[test]
    fn panels_per_country() {
        let charts = render(&[
            row(ModelKind::ItemKnn, "FR", 10, 0.1, Some(0.0)),
            row(ModelKind::ItemKnn, "DE", 10, -0.1, Some(0.0)),
            row(ModelKind::NeuMf, "DE", 10, -0.2, Some(0.1)),
        ])
        .unwrap();
        assert_eq!(charts.len(), 1);
        assert_eq!(charts[0].svg.matches(r#"<g class="panel">"#).count(), 2);
        assert_eq!(
            charts[0],
            render(&[
                row(ModelKind::ItemKnn, "FR", 10, 0.1, Some(0.0)),
                row(ModelKind::ItemKnn, "DE", 10, -0.1, Some(0.0)),
                row(ModelKind::NeuMf, "DE", 10, -0.2, Some(0.1)),
            ])
            .unwrap()[0]
        );
    }
}
