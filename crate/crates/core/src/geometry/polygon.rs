use super::{cross, Point};

/// Shoelace sum; positive for rings that turn counter-clockwise in the raw
/// `(x, y)` plane.
pub fn signed_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, p) in ring.iter().enumerate() {
        let q = ring[(i + 1) % ring.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    acc / 2.0
}

pub fn polygon_area(ring: &[Point]) -> f64 {
    signed_area(ring).abs()
}

fn segment_line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Sutherland–Hodgman: clips `subject` against the convex polygon `clip`.
/// Both rings may have either orientation.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let area = signed_area(clip);
    if area == 0.0 {
        return Vec::new();
    }
    let orient = area.signum();
    let inside = |a: Point, b: Point, p: Point| cross(a, b, p) * orient >= 0.0;

    let mut output: Vec<Point> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = inside(a, b, cur);
            let prev_in = inside(a, b, prev);
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_overlapping_squares() {
        let a = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        let b = [
            Point::new(1.0, 1.0),
            Point::new(3.0, 1.0),
            Point::new(3.0, 3.0),
            Point::new(1.0, 3.0),
        ];
        assert!((polygon_area(&clip_convex(&a, &b)) - 1.0).abs() < 1e-12);
        let mut rev = b;
        rev.reverse();
        assert!((polygon_area(&clip_convex(&a, &rev)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_clip_is_empty() {
        let a = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0)];
        let line = [Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
        assert!(clip_convex(&a, &line).is_empty());
    }
}
