use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use bhtsne_core::{load_labels, load_matrix, Format, Points};

use crate::CliResult;

pub const DEFAULT_SIZE: u32 = 800;
pub const MARGIN: f64 = 0.05;

/// The ten-color categorical palette used by common plotting libraries.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Square viewport around the data: the larger extent fills the canvas minus
/// a margin on each side, the other axis is centered. Screen y grows down.
struct Viewport {
    center: [f64; 2],
    scale: f64,
    size: f64,
}

impl Viewport {
    fn fit(y: &Points<f64>, size: u32) -> Viewport {
        let size = size as f64;
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in 0..2 {
            for &v in &y.coords[c] {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let inner = size * (1.0 - 2.0 * MARGIN);
        Viewport {
            center: [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])],
            scale: if span > 0.0 { inner / span } else { 0.0 },
            size,
        }
    }

    fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let h = 0.5 * self.size;
        [
            h + (p[0] - self.center[0]) * self.scale,
            h - (p[1] - self.center[1]) * self.scale,
        ]
    }
}

/// Class label -> palette color, by rank of the label among distinct labels.
fn colors(labels: Option<&[i64]>, n: usize) -> Vec<&'static str> {
    match labels {
        None => vec![PALETTE[0]; n],
        Some(ls) => {
            let ranks: BTreeMap<i64, usize> = ls
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(r, l)| (l, r))
                .collect();
            ls.iter().map(|l| PALETTE[ranks[l] % PALETTE.len()]).collect()
        }
    }
}

pub fn render_svg(y: &Points<f64>, labels: Option<&[i64]>, size: u32) -> String {
    let vp = Viewport::fit(y, size);
    let fills = colors(labels, y.len());
    let radius = if y.len() > 5000 { 1.5 } else { 2.5 };
    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#).unwrap();
    for (i, fill) in fills.iter().enumerate() {
        let [cx, cy] = vp.map(y.get(i));
        writeln!(
            s,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{radius}" fill="{fill}" fill-opacity="0.8"/>"#
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn run(input: &Path, labels: Option<&Path>, out: &Path, size: u32) -> CliResult<()> {
    let m = load_matrix::<f64>(input, Format::sniff(input)?)?;
    if m.n_dims() != 2 {
        return Err(anyhow::anyhow!("{} has {} columns, expected 2", input.display(), m.n_dims()).into());
    }
    let y = Points::from_matrix(&m)?;
    let labels = match labels {
        Some(p) => {
            let l = load_labels(p)?;
            l.check_len(y.len())
                .with_context(|| format!("labels in {}", p.display()))?;
            Some(l.labels)
        }
        None => None,
    };
    std::fs::write(out, render_svg(&y, labels.as_deref(), size))
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circles(svg: &str) -> Vec<(f64, f64, String)> {
        svg.lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let attr = |name: &str| {
                    let start = l.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
                    l[start..start + l[start..].find('"').unwrap()].to_string()
                };
                (attr("cx").parse().unwrap(), attr("cy").parse().unwrap(), attr("fill"))
            })
            .collect()
    }

    #[test]
    fn three_points_two_classes() {
        let y = Points::from_pairs(&[[0.0, 0.0], [1.0, 2.0], [-3.0, 1.0]]);
        let svg = render_svg(&y, Some(&[5, 9, 5]), 800);
        let cs = circles(&svg);
        assert_eq!(cs.len(), 3);
        let fills: std::collections::BTreeSet<_> = cs.iter().map(|c| c.2.clone()).collect();
        assert_eq!(fills.len(), 2);
        assert_eq!(cs[0].2, cs[2].2);
    }

    #[test]
    fn no_labels_single_color() {
        let y = Points::from_pairs(&[[0.0, 0.0], [1.0, 2.0], [-3.0, 1.0], [4.0, 4.0]]);
        let cs = circles(&render_svg(&y, None, 800));
        assert!(cs.iter().all(|c| c.2 == PALETTE[0]));
    }

    #[test]
    fn points_inside_margin() {
        let y = Points::from_pairs(&[[-10.0, 3.0], [30.0, 5.0], [0.0, -1.0], [12.0, 7.5]]);
        let cs = circles(&render_svg(&y, None, 800));
        let (lo, hi) = (800.0 * MARGIN - 1e-3, 800.0 * (1.0 - MARGIN) + 1e-3);
        for (x, y, _) in &cs {
            assert!((lo..=hi).contains(x) && (lo..=hi).contains(y), "({x}, {y})");
        }
        // the wider axis touches both margins
        let xs: Vec<f64> = cs.iter().map(|c| c.0).collect();
        assert!((xs.iter().cloned().fold(f64::INFINITY, f64::min) - 40.0).abs() < 1e-3);
        assert!((xs.iter().cloned().fold(0.0, f64::max) - 760.0).abs() < 1e-3);
    }

    #[test]
    fn more_classes_than_colors_wrap() {
        let labels: Vec<i64> = (0..12).collect();
        let y = Points::from_pairs(&(0..12).map(|i| [i as f64, 0.0]).collect::<Vec<_>>());
        let cs = circles(&render_svg(&y, Some(&labels), 100));
        assert_eq!(cs[10].2, PALETTE[0]);
        assert_eq!(cs[11].2, PALETTE[1]);
    }
}
