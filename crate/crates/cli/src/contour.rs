//! Minimal SVG contour plot of a function on a rectangular grid, drawn by
//! marching squares.

use std::fmt::Write;

use tiltsens_core::estimator::Classification;

const W: f64 = 520.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

/// Line segments where the bilinear surface through `z` crosses `level`.
/// `z[i][j]` sits at `(xs[i], ys[j])`; squares touching a non-finite value
/// are skipped.
pub fn iso_segments(xs: &[f64], ys: &[f64], z: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut out = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            // corners counter-clockwise from (i, j)
            let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v: Vec<f64> = c.iter().map(|&(a, b)| z[a][b]).collect();
            if v.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let above: Vec<bool> = v.iter().map(|&x| x > level).collect();
            let mut pts = Vec::new();
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if above[a] != above[b] {
                    let s = (level - v[a]) / (v[b] - v[a]);
                    let (pa, pb) = (c[a], c[b]);
                    let x = xs[pa.0] + s * (xs[pb.0] - xs[pa.0]);
                    let y = ys[pa.1] + s * (ys[pb.1] - ys[pa.1]);
                    pts.push((e, (x, y)));
                }
            }
            match pts.len() {
                2 => out.push([pts[0].1, pts[1].1]),
                4 => {
                    // saddle: pair edges according to the centre value
                    let centre = v.iter().sum::<f64>() / 4.0 > level;
                    if centre == above[0] {
                        out.push([pts[0].1, pts[1].1]);
                        out.push([pts[2].1, pts[3].1]);
                    } else {
                        out.push([pts[0].1, pts[3].1]);
                        out.push([pts[1].1, pts[2].1]);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Round levels spanning the finite range of `z`, at most about `target`.
pub fn nice_levels(z: &[Vec<f64>], target: usize) -> Vec<f64> {
    let vals: Vec<f64> = z.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if vals.is_empty() || lo == hi {
        return Vec::new();
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut levels = Vec::new();
    let mut l = (lo / step).ceil() * step;
    while l < hi {
        if l > lo {
            levels.push(l);
        }
        l += step;
    }
    levels
}

fn fill(c: Option<Classification>) -> &'static str {
    match c {
        Some(Classification::Worse) => "#f4c7c3",
        Some(Classification::Better) => "#c6e2c3",
        Some(Classification::Indeterminate) => "#ffffff",
        None => "#d9d9d9",
    }
}

/// SVG document: classification cells as shaded tiles, labelled contour
/// lines of `z`, and the zero contour drawn heavier.
pub fn contour_svg(
    xs: &[f64],
    ys: &[f64],
    z: &[Vec<f64>],
    class: &[Vec<Option<Classification>>],
    labels: (&str, &str, &str),
) -> String {
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let (y0, y1) = (ys[0], ys[ys.len() - 1]);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + if x1 > x0 { (x - x0) / (x1 - x0) * pw } else { pw / 2.0 };
    let sy = |y: f64| TOP + ph - if y1 > y0 { (y - y0) / (y1 - y0) * ph } else { ph / 2.0 };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, labels.2);
    // tiles centred on grid points, bounded by midpoints
    let mid = |v: &[f64], k: usize, lower: bool| -> f64 {
        if lower {
            if k == 0 { v[0] } else { 0.5 * (v[k - 1] + v[k]) }
        } else if k + 1 == v.len() {
            v[k]
        } else {
            0.5 * (v[k] + v[k + 1])
        }
    };
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            let (a, b) = (sx(mid(xs, i, true)), sx(mid(xs, i, false)));
            let (c, d) = (sy(mid(ys, j, false)), sy(mid(ys, j, true)));
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                a,
                c,
                (b - a).max(1.0),
                (d - c).max(1.0),
                fill(class[i][j])
            );
        }
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let mut levels = nice_levels(z, 8);
    let has_zero = levels.contains(&0.0);
    if !has_zero && z.iter().flatten().any(|v| *v < 0.0) && z.iter().flatten().any(|v| *v > 0.0) {
        levels.push(0.0);
    }
    for level in levels {
        let width = if level == 0.0 { 2.0 } else { 0.8 };
        let segs = iso_segments(xs, ys, z, level);
        for seg in &segs {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="{width}"/>"#,
                sx(seg[0].0),
                sy(seg[0].1),
                sx(seg[1].0),
                sy(seg[1].1)
            );
        }
        if let Some(seg) = segs.get(segs.len() / 2) {
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" fill="#333">{}</text>"##,
                sx(seg[0].0) + 2.0,
                sy(seg[0].1) - 2.0,
                trim(level)
            );
        }
    }
    for (k, &x) in xs.iter().enumerate() {
        if xs.len() <= 6 || k % 2 == 0 {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(x), TOP + ph + 15.0, trim(x));
        }
    }
    for (k, &y) in ys.iter().enumerate() {
        if ys.len() <= 6 || k % 2 == 0 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 5.0, sy(y) + 4.0, trim(y));
        }
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, labels.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        labels.1
    );
    s.push_str("</svg>\n");
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_gives_straight_line() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0, 2.0];
        let z: Vec<Vec<f64>> = xs.iter().map(|&x| ys.iter().map(|&y| x + y).collect()).collect();
        let segs = iso_segments(&xs, &ys, &z, 2.0);
        assert!(!segs.is_empty());
        for s in segs {
            for p in s {
                assert!((p.0 + p.1 - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nan_squares_skipped_and_saddle_handled() {
        let z = vec![vec![f64::NAN, 1.0], vec![1.0, 1.0]];
        assert!(iso_segments(&[0.0, 1.0], &[0.0, 1.0], &z, 0.5).is_empty());
        let z = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        assert_eq!(iso_segments(&[0.0, 1.0], &[0.0, 1.0], &z, 0.0).len(), 2);
    }

    #[test]
    fn levels_are_round() {
        let z = vec![vec![-223.0, -150.0], vec![-40.0, 12.0]];
        let l = nice_levels(&z, 8);
        assert!(l.iter().all(|v| (v / 25.0).fract() == 0.0), "{l:?}");
        assert!(nice_levels(&[vec![1.0, 1.0]], 5).is_empty());
        assert_eq!(trim(0.00100), "0.001");
        assert_eq!(trim(-0.0), "0");
    }

    #[test]
    fn svg_is_deterministic() {
        let xs = [0.0, 0.5, 1.0];
        let z: Vec<Vec<f64>> = xs.iter().map(|&x| xs.iter().map(|&y| x - y).collect()).collect();
        let class = vec![vec![Some(Classification::Indeterminate); 3]; 3];
        let a = contour_svg(&xs, &xs, &z, &class, ("g1", "g0", "ACE"));
        assert_eq!(a, contour_svg(&xs, &xs, &z, &class, ("g1", "g0", "ACE")));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("stroke-width=\"2\""));
    }
}
