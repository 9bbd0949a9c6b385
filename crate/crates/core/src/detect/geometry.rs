//! Rotated-rectangle overlap in the BEV plane.

use crate::pcio::Box3D;

type Pt = [f64; 2];

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon; positive for counter-clockwise.
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

fn line_intersection(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    let (cp, cq) = (cross(a, b, p), cross(a, b, q));
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_polygon(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out: Vec<Pt> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (p_in, q_in) = (cross(a, b, p) >= 0.0, cross(a, b, q) >= 0.0);
            if p_in {
                out.push(p);
                if !q_in {
                    out.push(line_intersection(p, q, a, b));
                }
            } else if q_in {
                out.push(line_intersection(p, q, a, b));
            }
        }
    }
    out
}

/// Intersection area of the two BEV footprints.
pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let gap = a.bev_radius() + b.bev_radius();
    if (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]) >= gap {
        return 0.0;
    }
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners())).max(0.0)
}

/// BEV intersection over union of two rotated boxes, in `[0, 1]`.
/// Zero-area boxes give 0.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let (area_a, area_b) = (a.dims[0] * a.dims[1], b.dims[0] * b.dims[1]);
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    let inter = bev_intersection(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
