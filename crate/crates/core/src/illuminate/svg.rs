use std::fmt::Write;

use super::IlluminatedTree;

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub card_width: u32,
    pub card_height: u32,
    pub thumb: u32,
    pub h_gap: u32,
    pub v_gap: u32,
    pub margin: u32,
    pub font_size: u32,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            card_width: 150,
            card_height: 116,
            thumb: 64,
            h_gap: 16,
            v_gap: 84,
            margin: 16,
            font_size: 11,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#d62f8c", "#3b6fd6", "#2fa35a", "#e08a1e", "#8a4fd0", "#1fa5a8", "#b8423a", "#6f6f6f",
];

fn class_color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
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

fn pct(f: f64) -> String {
    format!("{:.0}%", f * 100.0)
}

/// Top-left corner of every node card. Leaves are spaced evenly in preorder
/// (left branch first); a parent is centered over its children.
fn layout(it: &IlluminatedTree, s: &SvgStyle, top: u32) -> Vec<(f64, f64)> {
    let nodes = &it.tree.nodes;
    let mut pos = vec![(0.0, 0.0); nodes.len()];
    let mut next_leaf = 0u32;
    fn place(id: usize, it: &IlluminatedTree, s: &SvgStyle, top: u32, next_leaf: &mut u32, pos: &mut [(f64, f64)]) -> f64 {
        let node = &it.tree.nodes[id];
        let y = (top + node.depth as u32 * (s.card_height + s.v_gap)) as f64;
        let x = match node.split {
            None => {
                let x = (s.margin + *next_leaf * (s.card_width + s.h_gap)) as f64;
                *next_leaf += 1;
                x
            }
            Some((_, _, l, r)) => {
                let xl = place(l, it, s, top, next_leaf, pos);
                let xr = place(r, it, s, top, next_leaf, pos);
                (xl + xr) / 2.0
            }
        };
        pos[id] = (x, y);
        x
    }
    place(0, it, s, top, &mut next_leaf, &mut pos);
    pos
}

/// Renders the tree as a standalone SVG document. Output depends only on
/// the tree and the style, so equal inputs give identical bytes.
pub fn render_tree_svg(it: &IlluminatedTree, style: &SvgStyle) -> String {
    let s = style;
    let tree = &it.tree;
    let n_leaves = tree.leaves().count() as u32;
    let header = 3 * s.font_size + 8;
    let top = s.margin + header;
    let depth = tree.depth() as u32;
    let width = 2 * s.margin + n_leaves * (s.card_width + s.h_gap) - s.h_gap;
    let width = width.max(2 * s.margin + 360);
    let height = top + (depth + 1) * s.card_height + depth * s.v_gap + s.margin;
    let pos = layout(it, s, top);
    let (cw, ch, fs) = (s.card_width as f64, s.card_height as f64, s.font_size);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="{fs}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    let m = &it.metrics;
    let acc = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    let _ = writeln!(
        out,
        r#"<text class="metrics" x="{}" y="{}">layer {} · tree train {:.3} · tree test {} · CNN test {}</text>"#,
        s.margin,
        s.margin + fs,
        escape(&it.layer),
        m.tree_train_acc,
        acc(m.tree_test_acc),
        acc(m.cnn_test_acc)
    );
    let legend_y = s.margin + 2 * fs + 6;
    let mut lx = s.margin as f64;
    for (k, name) in tree.class_order.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{}" width="{fs}" height="{fs}" fill="{}"/><text x="{}" y="{legend_y}">{}</text>"#,
            legend_y - fs + 1,
            class_color(k),
            lx + fs as f64 + 4.0,
            escape(name)
        );
        lx += fs as f64 + 12.0 + 7.0 * name.chars().count() as f64;
    }

    for (node, ann) in tree.nodes.iter().zip(&it.nodes) {
        let Some((_, thr, l, r)) = node.split else { continue };
        let (px, py) = pos[node.id];
        let (sx, sy) = (px + cw / 2.0, py + ch);
        for (child, is_left) in [(l, true), (r, false)] {
            let (cx, cy) = pos[child];
            let (ex, ey) = (cx + cw / 2.0, cy);
            let side = if is_left { "left" } else { "right" };
            let _ = writeln!(out, r#"<g class="edge" data-from="{}" data-to="{child}" data-side="{side}">"#, node.id);
            let _ = writeln!(out, r##"<line x1="{sx}" y1="{sy}" x2="{ex}" y2="{ey}" stroke="#555555" stroke-width="1.5"/>"##);
            let anchor = if is_left { "end" } else { "start" };
            let tx = (sx + ex) / 2.0 + if is_left { -6.0 } else { 6.0 };
            let mut ty = sy + (ey - sy) / 2.0 - (tree.n_classes() as f64 * (fs as f64 + 2.0)) / 2.0;
            let cond = if is_left { format!("&gt; {thr:.4}") } else { format!("≤ {thr:.4}") };
            let _ = writeln!(out, r#"<text x="{tx}" y="{ty}" text-anchor="{anchor}">{cond}</text>"#);
            if let Some(flow) = &ann.class_flow {
                for (k, f) in flow.iter().enumerate() {
                    if f.n == 0 {
                        continue;
                    }
                    ty += fs as f64 + 2.0;
                    let frac = if is_left { f.left } else { f.right };
                    let _ = writeln!(
                        out,
                        r#"<text class="flow" x="{tx}" y="{ty}" text-anchor="{anchor}" fill="{}">{}: {}</text>"#,
                        class_color(k),
                        escape(&tree.class_order[k]),
                        pct(frac)
                    );
                }
            }
            let _ = writeln!(out, "</g>");
        }
    }

    for (node, ann) in tree.nodes.iter().zip(&it.nodes) {
        let (x, y) = pos[node.id];
        let kind = if node.is_leaf() { "leaf" } else { "internal" };
        let _ = writeln!(out, r#"<g class="node {kind}" id="node-{}">"#, node.id);
        let _ = writeln!(
            out,
            r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" rx="6" fill="#f7f7f7" stroke="#333333"/>"##
        );
        let text_x = x + 8.0;
        match node.split {
            Some((_, thr, _, _)) => {
                let t = s.thumb as f64;
                let ix = x + (cw - t) / 2.0;
                if let Some(href) = &ann.viz {
                    let href = escape(href);
                    let _ = writeln!(
                        out,
                        r#"<image x="{ix}" y="{}" width="{t}" height="{t}" href="{href}" xlink:href="{href}" preserveAspectRatio="none"/>"#,
                        y + 6.0
                    );
                }
                let name = ann.feature_name.as_deref().unwrap_or("?");
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#,
                    x + cw / 2.0,
                    y + t + 8.0 + fs as f64,
                    escape(name)
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle">&gt; {thr:.4} ⇒ left</text>"#,
                    x + cw / 2.0,
                    y + t + 10.0 + 2.0 * fs as f64
                );
            }
            None => {
                let total = node.n_samples().max(1) as f64;
                let bar_w = cw - 16.0;
                let mut bx = text_x;
                for (k, &c) in node.histogram.iter().enumerate() {
                    if c == 0 {
                        continue;
                    }
                    let w = bar_w * c as f64 / total;
                    let _ = writeln!(
                        out,
                        r#"<rect class="bar" x="{bx}" y="{}" width="{w}" height="14" fill="{}"><title>{}: {c}</title></rect>"#,
                        y + 10.0,
                        class_color(k),
                        escape(&tree.class_order[k])
                    );
                    bx += w;
                }
                let pred = &tree.class_order[node.predicted_class];
                let _ = writeln!(
                    out,
                    r#"<text x="{text_x}" y="{}" font-weight="bold" fill="{}">{}</text>"#,
                    y + 26.0 + 1.5 * fs as f64,
                    class_color(node.predicted_class),
                    escape(pred)
                );
                let counts: Vec<String> = node.histogram.iter().map(|c| c.to_string()).collect();
                let _ = writeln!(
                    out,
                    r#"<text x="{text_x}" y="{}">n = {} [{}]</text>"#,
                    y + 30.0 + 2.5 * fs as f64,
                    node.n_samples(),
                    counts.join(", ")
                );
                if !ann.examples.is_empty() {
                    let _ = writeln!(
                        out,
                        r##"<text x="{text_x}" y="{}" fill="#666666">{} examples</text>"##,
                        y + 34.0 + 3.5 * fs as f64,
                        ann.examples.len()
                    );
                }
            }
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtree::{DecisionTree, FlowFraction, TreeNode};
    use crate::illuminate::{NodeAnnotation, TreeMetrics, SCHEMA_VERSION};

    fn depth_one() -> IlluminatedTree {
        let leaf = |id, histogram: Vec<usize>, predicted_class| TreeNode {
            id,
            depth: 1,
            split: None,
            histogram,
            predicted_class,
        };
        let tree = DecisionTree {
            class_order: vec!["eosinophil".into(), "neutrophil".into()],
            layer_shape: (10, 10, 128),
            nodes: vec![
                TreeNode {
                    id: 0,
                    depth: 0,
                    split: Some((8329, 0.25, 1, 2)),
                    histogram: vec![100, 100],
                    predicted_class: 0,
                },
                leaf(1, vec![57, 12], 0),
                leaf(2, vec![43, 88], 1),
            ],
            params: None,
        };
        let blank = |id| NodeAnnotation {
            id,
            feature_name: None,
            viz: None,
            class_flow: None,
            examples: vec![],
        };
        IlluminatedTree {
            schema_version: SCHEMA_VERSION,
            layer: "4M".into(),
            tree,
            nodes: vec![
                NodeAnnotation {
                    id: 0,
                    feature_name: Some("6_5_9".into()),
                    viz: Some("viz/4M_c9.png".into()),
                    class_flow: Some(vec![
                        FlowFraction { n: 100, left: 0.57, right: 0.43 },
                        FlowFraction { n: 100, left: 0.12, right: 0.88 },
                    ]),
                    examples: vec![],
                },
                blank(1),
                blank(2),
            ],
            metrics: TreeMetrics {
                tree_train_acc: 0.725,
                tree_test_acc: Some(0.88),
                cnn_test_acc: Some(0.93),
                n_train: 200,
                n_test: 50,
            },
            excluded: vec![],
        }
    }

    #[test]
    fn structure_counts() {
        let svg = render_tree_svg(&depth_one(), &SvgStyle::default());
        assert_eq!(svg.matches(r#"class="node "#).count(), 3);
        assert_eq!(svg.matches(r#"class="edge""#).count(), 2);
        assert_eq!(svg.matches("<image").count(), 1);
        assert!(svg.contains(r#"href="viz/4M_c9.png""#));
        assert!(svg.contains("6_5_9"));
    }

    #[test]
    fn flow_percentages_on_edges() {
        let svg = render_tree_svg(&depth_one(), &SvgStyle::default());
        let left = svg.split(r#"data-side="left""#).nth(1).unwrap().split("</g>").next().unwrap();
        let right = svg.split(r#"data-side="right""#).nth(1).unwrap().split("</g>").next().unwrap();
        assert!(left.contains("eosinophil: 57%"));
        assert!(right.contains("neutrophil: 88%"));
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = render_tree_svg(&depth_one(), &SvgStyle::default());
        let b = render_tree_svg(&depth_one(), &SvgStyle::default());
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<g").count(), a.matches("</g>").count());
    }

    #[test]
    fn class_names_are_escaped() {
        let mut it = depth_one();
        it.tree.class_order[0] = "a<b&c".into();
        let svg = render_tree_svg(&it, &SvgStyle::default());
        assert!(svg.contains("a&lt;b&amp;c"));
        assert!(!svg.contains("a<b"));
    }
}
