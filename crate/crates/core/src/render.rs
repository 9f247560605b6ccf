//! DOT and SVG rendering of the layered network with importance-shaded
//! edges, and the aligned feature-importance table used for bar charts.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pathrank::{node_name, EdgeImportance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
        Rgb(
            mix(self.0, other.0),
            mix(self.1, other.1),
            mix(self.2, other.2),
        )
    }

    fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

impl std::str::FromStr for Rgb {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let h = s.strip_prefix('#').unwrap_or(s);
        let byte = |i: usize| u8::from_str_radix(h.get(i..i + 2).unwrap_or(""), 16);
        match (h.len(), byte(0), byte(2), byte(4)) {
            (6, Ok(r), Ok(g), Ok(b)) => Ok(Rgb(r, g, b)),
            _ => Err(format!("bad color {s:?}, expected #rrggbb")),
        }
    }
}

impl std::fmt::Display for Rgb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.hex())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    /// Edges whose importance falls below this quantile are drawn nearly
    /// transparent.
    pub threshold_quantile: f64,
    pub color_low: Rgb,
    pub color_high: Rgb,
    /// Optional display labels, `labels[layer][node]`.
    pub node_labels: Option<Vec<Vec<String>>>,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            threshold_quantile: 0.5,
            color_low: Rgb(0x1f, 0x4e, 0xd8),
            color_high: Rgb(0xd8, 0x1f, 0x1f),
            node_labels: None,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold_quantile) {
            return Err(Error::Config(format!(
                "threshold_quantile {} must lie in [0, 1]",
                self.threshold_quantile
            )));
        }
        Ok(())
    }
}

/// Linear-interpolated quantile of unsorted values.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EdgeStyle {
    penwidth: f64,
    color: Rgb,
    alpha: u8,
}

const FADED_ALPHA: u8 = 0x14;

struct Styler {
    lo: f64,
    hi: f64,
    cutoff: f64,
    low: Rgb,
    high: Rgb,
}

impl Styler {
    fn new(values: &[f64], spec: &RenderSpec) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            lo,
            hi,
            cutoff: quantile(values, spec.threshold_quantile),
            low: spec.color_low,
            high: spec.color_high,
        }
    }

    fn style(&self, v: f64) -> EdgeStyle {
        let t = if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            1.0
        };
        let alpha = if v < self.cutoff {
            FADED_ALPHA
        } else {
            (0x40 as f64 + t * (0xff - 0x40) as f64).round() as u8
        };
        EdgeStyle {
            penwidth: 0.5 + 4.5 * t,
            color: self.low.lerp(self.high, t),
            alpha,
        }
    }
}

fn check_edges(layer_widths: &[usize], edges: &EdgeImportance) -> Result<Vec<f64>> {
    let shapes_ok = edges.layer_widths == layer_widths
        && edges.layers.len() + 1 == layer_widths.len()
        && edges.layers.iter().enumerate().all(|(l, m)| {
            m.len() == layer_widths[l] && m.iter().all(|r| r.len() == layer_widths[l + 1])
        });
    if !shapes_ok {
        return Err(Error::Shape(format!(
            "edge importances do not cover a network of widths {layer_widths:?}"
        )));
    }
    let values: Vec<f64> = edges.iter().map(|(_, v)| v).collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric(
            "edge importances must be finite and nonnegative".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::Shape("network has no edges".into()));
    }
    Ok(values)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Layered DOT graph: one same-rank subgraph per layer, edges styled by
/// importance. Output is deterministic and LF-terminated.
pub fn to_dot(layer_widths: &[usize], edges: &EdgeImportance, spec: &RenderSpec) -> Result<String> {
    spec.validate()?;
    let values = check_edges(layer_widths, edges)?;
    let styler = Styler::new(&values, spec);
    let n_layers = layer_widths.len();
    let mut out = String::new();
    out.push_str(
        "digraph cvt {\n  rankdir=LR;\n  splines=line;\n  node [shape=circle, fontsize=10];\n",
    );
    for (l, &w) in layer_widths.iter().enumerate() {
        let _ = writeln!(out, "  subgraph layer_{l} {{\n    rank=same;");
        for i in 0..w {
            let name = node_name(l, i, n_layers);
            let label = spec
                .node_labels
                .as_ref()
                .and_then(|ls| ls.get(l))
                .and_then(|ls| ls.get(i))
                .map(|s| format!("{name}\\n{}", escape(s)))
                .unwrap_or_else(|| name.clone());
            let _ = writeln!(out, "    {name} [label=\"{label}\"];");
        }
        out.push_str("  }\n");
    }
    for ((l, i, j), v) in edges.iter() {
        let s = styler.style(v);
        let _ = writeln!(
            out,
            "  {} -> {} [penwidth={:.3}, color=\"{}{:02x}\", weight={:.6}];",
            node_name(l, i, n_layers),
            node_name(l + 1, j, n_layers),
            s.penwidth,
            s.color.hex(),
            s.alpha,
            v
        );
    }
    out.push_str("}\n");
    Ok(out)
}

/// Standalone SVG with fixed layered coordinates.
pub fn to_svg(layer_widths: &[usize], edges: &EdgeImportance, spec: &RenderSpec) -> Result<String> {
    spec.validate()?;
    let values = check_edges(layer_widths, edges)?;
    let styler = Styler::new(&values, spec);
    let n_layers = layer_widths.len();
    let (dx, dy, margin) = (180.0, 60.0, 50.0);
    let tallest = *layer_widths.iter().max().unwrap() as f64;
    let width = margin * 2.0 + dx * (n_layers - 1) as f64;
    let height = margin * 2.0 + dy * (tallest - 1.0);
    let pos = |l: usize, i: usize| {
        let offset = (tallest - layer_widths[l] as f64) * dy / 2.0;
        (margin + dx * l as f64, margin + offset + dy * i as f64)
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    for ((l, i, j), v) in edges.iter() {
        let s = styler.style(v);
        let (x1, y1) = pos(l, i);
        let (x2, y2) = pos(l + 1, j);
        let _ = writeln!(
            out,
            "  <line x1=\"{x1}\" y1=\"{y1}\" x2=\"{x2}\" y2=\"{y2}\" stroke=\"{}\" stroke-width=\"{:.3}\" stroke-opacity=\"{:.3}\"/>",
            s.color.hex(),
            s.penwidth,
            s.alpha as f64 / 255.0
        );
    }
    for (l, &w) in layer_widths.iter().enumerate() {
        for i in 0..w {
            let (x, y) = pos(l, i);
            let _ = writeln!(
                out,
                "  <circle cx=\"{x}\" cy=\"{y}\" r=\"16\" fill=\"white\" stroke=\"black\"/>\n  <text x=\"{x}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
                y + 4.0,
                node_name(l, i, n_layers)
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarRow {
    pub feature: String,
    pub cvt_importance: f64,
    pub rf_importance: f64,
}

/// Aligns the two importance vectors by feature name, each renormalized to
/// sum to 1.
pub fn importance_bars(cvt: &[(String, f64)], rf: &[(String, f64)]) -> Result<Vec<BarRow>> {
    let names = |v: &[(String, f64)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(cvt) != names(rf) {
        return Err(Error::Shape(format!(
            "feature sets differ: {:?} vs {:?}",
            names(cvt),
            names(rf)
        )));
    }
    let normalize = |v: &[(String, f64)]| -> Result<Vec<f64>> {
        let total: f64 = v.iter().map(|(_, x)| x).sum();
        if total.is_nan() || total <= 0.0 || v.iter().any(|(_, x)| *x < 0.0) {
            return Err(Error::Numeric(
                "importances must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(v.iter().map(|(_, x)| x / total).collect())
    };
    let (c, r) = (normalize(cvt)?, normalize(rf)?);
    Ok(cvt
        .iter()
        .zip(c.into_iter().zip(r))
        .map(|((name, _), (c, r))| BarRow {
            feature: name.clone(),
            cvt_importance: c,
            rf_importance: r,
        })
        .collect())
}

/// `feature,cvt_importance,rf_importance`
pub fn write_bars_csv<W: Write>(out: W, rows: &[BarRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Data(format!("writing importance csv: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(["feature", "cvt_importance", "rf_importance"])
            .map_err(|e| Error::Data(format!("writing importance csv: {e}")))?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing importance csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_edges(widths: &[usize], v: f64) -> EdgeImportance {
        EdgeImportance {
            layer_widths: widths.to_vec(),
            layers: widths
                .windows(2)
                .map(|w| vec![vec![v; w[1]]; w[0]])
                .collect(),
        }
    }

    #[derive(Debug, PartialEq)]
    enum Tok {
        Id(String),
        Str(String),
        Arrow,
        Punct(char),
    }

    /// Just enough DOT lexing to check structure.
    fn tokenize(src: &str) -> Vec<Tok> {
        let mut toks = Vec::new();
        let cs: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < cs.len() {
            let c = cs[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '/' && cs.get(i + 1) == Some(&'/') {
                while i < cs.len() && cs[i] != '\n' {
                    i += 1;
                }
            } else if c == '"' {
                let mut s = String::new();
                i += 1;
                while cs[i] != '"' {
                    if cs[i] == '\\' {
                        s.push(cs[i]);
                        i += 1;
                    }
                    s.push(cs[i]);
                    i += 1;
                }
                i += 1;
                toks.push(Tok::Str(s));
            } else if c == '-' && cs.get(i + 1) == Some(&'>') {
                toks.push(Tok::Arrow);
                i += 2;
            } else if c.is_alphanumeric() || c == '_' || c == '.' {
                let start = i;
                while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_' || cs[i] == '.') {
                    i += 1;
                }
                toks.push(Tok::Id(cs[start..i].iter().collect()));
            } else {
                assert!("{}[];=,".contains(c), "unexpected character {c:?}");
                toks.push(Tok::Punct(c));
                i += 1;
            }
        }
        toks
    }

    /// Splits the body into statements and returns (node statements, edge
    /// statements with their penwidths).
    fn statements(src: &str) -> (Vec<String>, Vec<(String, String, f64)>) {
        let toks = tokenize(src);
        assert_eq!(toks[0], Tok::Id("digraph".into()));
        let depth_ok = toks.iter().fold(0i32, |d, t| match t {
            Tok::Punct('{') => d + 1,
            Tok::Punct('}') => {
                assert!(d > 0);
                d - 1
            }
            _ => d,
        });
        assert_eq!(depth_ok, 0);
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for w in toks.windows(4) {
            match w {
                [Tok::Id(a), Tok::Arrow, Tok::Id(b), Tok::Punct('[')] => {
                    let start = toks.iter().position(|t| std::ptr::eq(t, &w[3])).unwrap();
                    let pw = toks[start..]
                        .windows(3)
                        .find_map(|x| match x {
                            [Tok::Id(k), Tok::Punct('='), Tok::Id(v)] if k == "penwidth" => {
                                Some(v.parse::<f64>().unwrap())
                            }
                            _ => None,
                        })
                        .unwrap();
                    edges.push((a.clone(), b.clone(), pw));
                }
                [p, Tok::Id(a), Tok::Punct('['), Tok::Id(k)]
                    if k == "label" && matches!(p, Tok::Punct(';')) =>
                {
                    nodes.push(a.clone())
                }
                _ => {}
            }
        }
        (nodes, edges)
    }

    #[test]
    fn dot_counts_for_iris_shape() {
        let widths = [4, 6, 6, 3];
        let dot = to_dot(
            &widths,
            &uniform_edges(&widths, 1.0),
            &RenderSpec::default(),
        )
        .unwrap();
        let (nodes, edges) = statements(&dot);
        assert_eq!(nodes.len(), 19);
        assert_eq!(edges.len(), 24 + 36 + 18);
        assert!(nodes.contains(&"pred_2".to_string()));
        assert!(nodes.contains(&"h1_5".to_string()));
        assert!(dot.ends_with("}\n") && !dot.contains('\r'));
    }

    #[test]
    fn uniform_importances_identical_style() {
        let widths = [2, 3, 2];
        let spec = RenderSpec {
            threshold_quantile: 0.0,
            ..Default::default()
        };
        let dot = to_dot(&widths, &uniform_edges(&widths, 0.3), &spec).unwrap();
        let styles: std::collections::BTreeSet<&str> = dot
            .lines()
            .filter(|l| l.contains("->"))
            .map(|l| &l[l.find('[').unwrap()..])
            .collect();
        assert_eq!(styles.len(), 1);
    }

    #[test]
    fn maximal_edge_has_max_penwidth_and_styles_are_monotone() {
        let widths = [3, 2, 2];
        let mut e = uniform_edges(&widths, 0.0);
        let mut k = 0.0;
        for m in e.layers.iter_mut() {
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    k += 1.0;
                    *v = (k * 7.0) % 5.0;
                }
            }
        }
        e.layers[1][1][0] = 10.0;
        let dot = to_dot(&widths, &e, &RenderSpec::default()).unwrap();
        let (_, edges) = statements(&dot);
        let imps: Vec<f64> = e.iter().map(|(_, v)| v).collect();
        let widest = edges.iter().map(|x| x.2).fold(0.0, f64::max);
        let at = edges
            .iter()
            .position(|x| x.0 == "h0_1" && x.1 == "pred_0")
            .unwrap();
        assert_eq!(edges[at].2, widest);
        for (a, ia) in edges.iter().zip(&imps) {
            for (b, ib) in edges.iter().zip(&imps) {
                if ia > ib {
                    assert!(a.2 >= b.2);
                }
            }
        }
    }

    #[test]
    fn low_edges_are_faded() {
        let widths = [2, 1, 1];
        let mut e = uniform_edges(&widths, 1.0);
        e.layers[0][0][0] = 0.0;
        let dot = to_dot(&widths, &e, &RenderSpec::default()).unwrap();
        let faded = dot.lines().find(|l| l.contains("x_0 -> h0_0")).unwrap();
        assert!(faded.contains(&format!("{:02x}\"", FADED_ALPHA)));
    }

    #[test]
    fn mismatched_edges_rejected() {
        let e = uniform_edges(&[2, 2, 2], 1.0);
        assert!(to_dot(&[2, 3, 2], &e, &RenderSpec::default()).is_err());
        let bad = RenderSpec {
            threshold_quantile: 1.5,
            ..Default::default()
        };
        assert!(to_dot(&[2, 2, 2], &e, &bad).is_err());
    }

    #[test]
    fn svg_has_every_edge() {
        let widths = [4, 6, 6, 3];
        let svg = to_svg(
            &widths,
            &uniform_edges(&widths, 1.0),
            &RenderSpec::default(),
        )
        .unwrap();
        assert_eq!(svg.matches("<line").count(), 78);
        assert_eq!(svg.matches("<circle").count(), 19);
    }

    #[test]
    fn bars_alignment() {
        let names = ["x_0", "x_1", "x_2", "x_3"].map(String::from);
        let pair = |v: [f64; 4]| names.iter().cloned().zip(v).collect::<Vec<_>>();
        let a = pair([0.1, 0.1, 0.4, 0.4]);
        let rows = importance_bars(&a, &a).unwrap();
        assert!(rows.iter().all(|r| r.cvt_importance == r.rf_importance));

        let rows = importance_bars(&a, &pair([0.05, 0.05, 0.5, 0.4])).unwrap();
        let top2 = |f: fn(&BarRow) -> f64| {
            let mut idx: Vec<usize> = (0..4).collect();
            idx.sort_by(|&i, &j| f(&rows[j]).total_cmp(&f(&rows[i])));
            let mut t = idx[..2].to_vec();
            t.sort();
            t
        };
        assert_eq!(top2(|r| r.cvt_importance), vec![2, 3]);
        assert_eq!(top2(|r| r.rf_importance), vec![2, 3]);
        let sum: f64 = rows.iter().map(|r| r.rf_importance).sum();
        assert!((sum - 1.0).abs() < 1e-12);

        let other = vec![("y".to_string(), 1.0)];
        assert!(importance_bars(&a, &other).is_err());
    }

    #[test]
    fn bars_csv_header() {
        let rows = vec![BarRow {
            feature: "x_0".into(),
            cvt_importance: 0.5,
            rf_importance: 0.25,
        }];
        let mut buf = Vec::new();
        write_bars_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "feature,cvt_importance,rf_importance\nx_0,0.5,0.25\n"
        );
    }
}
