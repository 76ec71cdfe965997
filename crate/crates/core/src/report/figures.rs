//! Plain SVG figures. Every figure carries the plotted numbers in a leading
//! comment block of CSV rows.

use std::fmt::Write as _;

use crate::coredata::{AlignedSeries, SeriesLayout};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 48.0;
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

pub fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Linear map from a data range onto a pixel range.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub struct Svg {
    data: String,
    body: String,
}

impl Svg {
    pub fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        Self { data: String::new(), body }
    }

    pub fn data_row(&mut self, row: &str) {
        self.data.push_str(row);
        self.data.push('\n');
    }

    pub fn push(&mut self, element: &str) {
        self.body.push_str(element);
        self.body.push('\n');
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<!-- data\n{}-->\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.data.replace("--", "- -"),
            self.body
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(points: &[(f64, f64)], stroke: &str, dashed: bool) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5"{} points="{}"/>"#,
        if dashed { r#" stroke-dasharray="4 3""# } else { "" },
        pts.join(" ")
    )
}

fn axes(svg: &mut Svg, x_label: &str, y_label: &str) {
    svg.push(&format!(
        r##"<path d="M{m} {t} V{b} H{r}" stroke="#333" fill="none"/>"##,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    ));
    svg.push(&format!(
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push(&format!(
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    ));
}

fn legend(svg: &mut Svg, entries: &[(String, &str)]) {
    for (i, (label, col)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        svg.push(&format!(
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{col}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            WIDTH - MARGIN - 110.0,
            y,
            WIDTH - MARGIN - 96.0,
            y + 9.0,
            escape(label)
        ));
    }
}

/// Cluster-coloured scatter of planar coordinates.
pub fn tsne_scatter(points: &[[f64; 2]], labels: &[usize]) -> String {
    let mut svg = Svg::new("t-SNE layout of patient codes by cluster");
    svg.data_row("x,y,cluster");
    let (x0, x1) = extent(points.iter().map(|p| p[0]));
    let (y0, y1) = extent(points.iter().map(|p| p[1]));
    let sx = Scale::new(x0, x1, MARGIN, WIDTH - MARGIN);
    let sy = Scale::new(y0, y1, HEIGHT - MARGIN, MARGIN);
    axes(&mut svg, "t-SNE 1", "t-SNE 2");
    for (p, &l) in points.iter().zip(labels) {
        svg.data_row(&format!("{},{},{}", p[0], p[1], l));
        svg.push(&format!(
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            sx.map(p[0]),
            sy.map(p[1]),
            colour(l)
        ));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    legend(&mut svg, &(0..k).map(|c| (format!("cluster {c}"), colour(c))).collect::<Vec<_>>());
    svg.finish()
}

/// Per-point mean and population SD of a set of series.
pub fn pointwise_mean_sd(series: &[AlignedSeries], len: usize) -> Vec<(f64, f64)> {
    let n = series.len() as f64;
    (0..len)
        .map(|j| {
            let mean = series.iter().map(|s| s.values[j]).sum::<f64>() / n;
            let var = series.iter().map(|s| (s.values[j] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

pub struct BandGroup<'a> {
    pub cluster: usize,
    pub real: &'a [AlignedSeries],
    pub sub: &'a [AlignedSeries],
    pub total: &'a [AlignedSeries],
}

/// Mean ± SD bands of real, subGAN and totalGAN series, one panel per
/// cluster stacked horizontally.
pub fn mean_bands(groups: &[BandGroup], layout: SeriesLayout) -> String {
    let mut svg = Svg::new("Mean ± SD of real and generated series per cluster");
    svg.data_row("cluster,source,index,mean,sd");
    axes(&mut svg, "time index (exposure starts after the dashed line)", "normalized value");
    let len = layout.len();
    let panel_w = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    let sy = Scale::new(-1.0, 1.0, HEIGHT - MARGIN, MARGIN);
    let sources = [("real", "#333333"), ("subGAN", "#1f77b4"), ("totalGAN", "#d62728")];
    for (g_i, g) in groups.iter().enumerate() {
        let left = MARGIN + g_i as f64 * panel_w;
        let sx = Scale::new(0.0, (len - 1) as f64, left + 6.0, left + panel_w - 6.0);
        let boundary = sx.map(layout.n_pre as f64 - 0.5);
        svg.push(&format!(
            r##"<line x1="{boundary:.2}" y1="{}" x2="{boundary:.2}" y2="{}" stroke="#999" stroke-dasharray="3 3"/>"##,
            MARGIN,
            HEIGHT - MARGIN
        ));
        svg.push(&format!(
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">cluster {}</text>"#,
            left + panel_w / 2.0,
            MARGIN - 6.0,
            g.cluster
        ));
        for ((name, col), set) in sources.iter().zip([g.real, g.sub, g.total]) {
            if set.is_empty() {
                continue;
            }
            let stats = pointwise_mean_sd(set, len);
            for (j, (m, s)) in stats.iter().enumerate() {
                svg.data_row(&format!("{},{name},{j},{m},{s}", g.cluster));
            }
            let upper: Vec<(f64, f64)> = stats.iter().enumerate().map(|(j, (m, s))| (sx.map(j as f64), sy.map(m + s))).collect();
            let lower: Vec<(f64, f64)> = stats.iter().enumerate().rev().map(|(j, (m, s))| (sx.map(j as f64), sy.map(m - s))).collect();
            let band: Vec<String> = upper.iter().chain(&lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            svg.push(&format!(r#"<polygon fill="{col}" fill-opacity="0.12" stroke="none" points="{}"/>"#, band.join(" ")));
            let mean: Vec<(f64, f64)> = stats.iter().enumerate().map(|(j, (m, _))| (sx.map(j as f64), sy.map(*m))).collect();
            svg.push(&polyline(&mean, col, *name != "real"));
        }
    }
    legend(&mut svg, &sources.iter().map(|(n, c)| (n.to_string(), *c)).collect::<Vec<_>>());
    svg.finish()
}

/// Equal-width histogram as densities.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if v >= lo && v <= hi {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
    }
    let total = values.len().max(1) as f64 * width;
    counts.iter().map(|c| c / total).collect()
}

fn density_curves(svg: &mut Svg, curves: &[(String, Vec<f64>, &str)], lo: f64, hi: f64, left: f64, right: f64) -> Scale {
    let bins = curves.first().map_or(1, |c| c.1.len());
    let width = (hi - lo) / bins as f64;
    let top = curves.iter().flat_map(|c| c.1.iter().copied()).fold(0.0, f64::max);
    let sx = Scale::new(lo, hi, left, right);
    let sy = Scale::new(0.0, if top > 0.0 { top * 1.1 } else { 1.0 }, HEIGHT - MARGIN, MARGIN);
    for (_, dens, col) in curves {
        let pts: Vec<(f64, f64)> = dens
            .iter()
            .enumerate()
            .map(|(b, d)| (sx.map(lo + (b as f64 + 0.5) * width), sy.map(*d)))
            .collect();
        svg.push(&polyline(&pts, col, false));
    }
    sx
}

/// Density of raw laboratory values with reference range markers.
pub fn value_density(values: &[f64], reference: &[(f64, &str)]) -> String {
    const BINS: usize = 40;
    let mut svg = Svg::new("Distribution of laboratory values (mg/dL)");
    let (lo, hi) = extent(values.iter().copied());
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let dens = histogram(values, lo, hi, BINS);
    svg.data_row("bin_start,bin_end,density");
    let width = (hi - lo) / BINS as f64;
    for (b, d) in dens.iter().enumerate() {
        svg.data_row(&format!("{},{},{}", lo + b as f64 * width, lo + (b + 1) as f64 * width, d));
    }
    axes(&mut svg, "mg/dL", "density");
    let sx = density_curves(&mut svg, &[("all".into(), dens, "#1f77b4")], lo, hi, MARGIN, WIDTH - MARGIN);
    for (v, label) in reference {
        svg.data_row(&format!("reference,{v},{label}"));
        let x = sx.map(*v);
        svg.push(&format!(
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#2ca02c" stroke-dasharray="5 3"/><text x="{:.2}" y="{}" font-family="sans-serif" font-size="10">{}</text>"##,
            MARGIN,
            HEIGHT - MARGIN,
            x + 3.0,
            MARGIN + 10.0,
            escape(label)
        ));
    }
    svg.finish()
}

/// Per-cluster densities of normalized values: overall, pre and during.
pub fn cluster_distributions(clusters: &[(usize, &[AlignedSeries])], layout: SeriesLayout) -> String {
    const BINS: usize = 20;
    let mut svg = Svg::new("Normalized measurement distributions per cluster");
    svg.data_row("cluster,part,bin,density");
    axes(&mut svg, "normalized value", "density");
    let panel_w = (WIDTH - 2.0 * MARGIN) / clusters.len().max(1) as f64;
    let parts = [("overall", "#333333"), ("pre", "#1f77b4"), ("during", "#d62728")];
    for (p_i, (cluster, series)) in clusters.iter().enumerate() {
        let left = MARGIN + p_i as f64 * panel_w;
        let collect = |range: std::ops::Range<usize>| -> Vec<f64> {
            series.iter().flat_map(|s| s.values[range.clone()].to_vec()).collect()
        };
        let sets = [collect(0..layout.len()), collect(layout.pre_range()), collect(layout.during_range())];
        let mut curves = Vec::new();
        for ((name, col), vals) in parts.iter().zip(&sets) {
            let dens = histogram(vals, -1.0, 1.0, BINS);
            for (b, d) in dens.iter().enumerate() {
                svg.data_row(&format!("{cluster},{name},{b},{d}"));
            }
            curves.push((name.to_string(), dens, *col));
        }
        density_curves(&mut svg, &curves, -1.0, 1.0, left + 4.0, left + panel_w - 4.0);
        svg.push(&format!(
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">cluster {cluster}</text>"#,
            left + panel_w / 2.0,
            MARGIN - 6.0
        ));
    }
    legend(&mut svg, &parts.iter().map(|(n, c)| (n.to_string(), *c)).collect::<Vec<_>>());
    svg.finish()
}

pub struct MatchPanel<'a> {
    pub cluster: usize,
    pub real_index: usize,
    pub real: &'a AlignedSeries,
    pub sub_index: usize,
    pub sub: &'a AlignedSeries,
    pub total_index: usize,
    pub total: &'a AlignedSeries,
}

/// Real series next to their closest pre-exposure matches from both models.
pub fn closest_matches(panels: &[MatchPanel], layout: SeriesLayout) -> String {
    let mut svg = Svg::new("Real series and closest synthetic matches");
    svg.data_row("panel,cluster,source,series_index,values");
    axes(&mut svg, "time index", "normalized value");
    let len = layout.len();
    let panel_w = (WIDTH - 2.0 * MARGIN) / panels.len().max(1) as f64;
    let sy = Scale::new(-1.0, 1.0, HEIGHT - MARGIN, MARGIN);
    let sources = [("real", "#333333"), ("subGAN", "#1f77b4"), ("totalGAN", "#d62728")];
    for (p_i, p) in panels.iter().enumerate() {
        let left = MARGIN + p_i as f64 * panel_w;
        let sx = Scale::new(0.0, (len - 1) as f64, left + 6.0, left + panel_w - 6.0);
        for ((name, col), (idx, s)) in sources
            .iter()
            .zip([(p.real_index, p.real), (p.sub_index, p.sub), (p.total_index, p.total)])
        {
            let vals: Vec<String> = s.values.iter().map(|v| v.to_string()).collect();
            svg.data_row(&format!("{p_i},{},{name},{idx},{}", p.cluster, vals.join(";")));
            let pts: Vec<(f64, f64)> = s.values.iter().enumerate().map(|(j, v)| (sx.map(j as f64), sy.map(*v))).collect();
            svg.push(&polyline(&pts, col, *name != "real"));
        }
    }
    legend(&mut svg, &sources.iter().map(|(n, c)| (n.to_string(), *c)).collect::<Vec<_>>());
    svg.finish()
}
