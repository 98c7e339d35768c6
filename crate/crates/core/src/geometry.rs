//! Great-circle helpers over `(lon, lat)` polylines.

use geo::{Coord, Distance, Haversine, InterpolatePoint, LineString, Point, Polygon};

/// Metres per degree of latitude on the mean-radius sphere.
pub const METRES_PER_DEGREE: f64 = 6_371_008.8 * std::f64::consts::PI / 180.0;

pub fn point(lon: f64, lat: f64) -> Point<f64> {
    Point::new(lon, lat)
}

pub fn haversine_m(a: Point<f64>, b: Point<f64>) -> f64 {
    Haversine::distance(a, b)
}

pub fn polyline_length(coords: &[[f64; 2]]) -> f64 {
    coords
        .windows(2)
        .map(|w| haversine_m(point(w[0][0], w[0][1]), point(w[1][0], w[1][1])))
        .sum()
}

/// Point at `offset` metres along the polyline, clamped to its ends.
pub fn point_along(coords: &[[f64; 2]], offset: f64) -> Point<f64> {
    let first = point(coords[0][0], coords[0][1]);
    if offset <= 0.0 {
        return first;
    }
    let mut walked = 0.0;
    for w in coords.windows(2) {
        let a = point(w[0][0], w[0][1]);
        let b = point(w[1][0], w[1][1]);
        let seg = haversine_m(a, b);
        if walked + seg >= offset && seg > 0.0 {
            return Haversine::point_at_ratio_between(a, b, (offset - walked) / seg);
        }
        walked += seg;
    }
    let last = coords[coords.len() - 1];
    point(last[0], last[1])
}

/// Closest point of a polyline to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    pub point: Point<f64>,
    pub distance_m: f64,
    /// Arc length from the first vertex to `point`.
    pub offset_m: f64,
}

/// Closest point using a tangent plane centred on the query, which stays
/// linear-accurate at street scale; reported distances are great-circle.
pub fn project_onto_polyline(coords: &[[f64; 2]], query: Point<f64>) -> PolylineProjection {
    let (lon0, lat0) = (query.x(), query.y());
    let k_lat = METRES_PER_DEGREE;
    let k_lon = METRES_PER_DEGREE * lat0.to_radians().cos();
    let to_xy = |c: [f64; 2]| ((c[0] - lon0) * k_lon, (c[1] - lat0) * k_lat);

    let mut best: Option<PolylineProjection> = None;
    let mut walked = 0.0;
    for w in coords.windows(2) {
        let (ax, ay) = to_xy(w[0]);
        let (bx, by) = to_xy(w[1]);
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let snapped = if t == 0.0 {
            point(w[0][0], w[0][1])
        } else if t == 1.0 {
            point(w[1][0], w[1][1])
        } else if k_lon.abs() > 0.0 {
            point(lon0 + (ax + t * dx) / k_lon, lat0 + (ay + t * dy) / k_lat)
        } else {
            point(w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1]))
        };
        let a = point(w[0][0], w[0][1]);
        let seg_len = haversine_m(a, point(w[1][0], w[1][1]));
        let distance = haversine_m(snapped, query);
        if best.is_none_or(|bp| distance < bp.distance_m) {
            let along = haversine_m(a, snapped).min(seg_len);
            best = Some(PolylineProjection { point: snapped, distance_m: distance, offset_m: walked + along });
        }
        walked += seg_len;
    }
    best.unwrap_or_else(|| {
        let p = point(coords[0][0], coords[0][1]);
        PolylineProjection { point: p, distance_m: haversine_m(p, query), offset_m: 0.0 }
    })
}

pub fn line_string(coords: &[[f64; 2]]) -> LineString<f64> {
    coords.iter().map(|c| Coord { x: c[0], y: c[1] }).collect()
}

/// Polygon from an open or closed `[lon, lat]` ring.
pub fn polygon(ring: &[[f64; 2]]) -> Polygon<f64> {
    Polygon::new(line_string(ring), vec![])
}

/// Initial bearing in degrees, folded onto [0, 180) so opposite directions agree.
pub fn axis_bearing(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lat1, lat2) = (a[1].to_radians(), b[1].to_radians());
    let dlon = (b[0] - a[0]).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(180.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn projection_on_vertex_and_segment() {
        let line = [[0.0, 0.0], [0.001, 0.0], [0.002, 0.0]];
        let p = project_onto_polyline(&line, point(0.001, 0.0));
        assert!(p.distance_m < 1e-6);
        assert_relative_eq!(p.offset_m, polyline_length(&line[..2]), max_relative = 1e-9);

        let p = project_onto_polyline(&line, point(0.0015, 0.0001));
        assert_relative_eq!(p.distance_m, haversine_m(point(0.0015, 0.0), point(0.0015, 0.0001)), max_relative = 1e-6);
    }

    #[test]
    fn point_along_midpoint() {
        let line = [[0.0, 0.0], [0.002, 0.0]];
        let mid = point_along(&line, polyline_length(&line) / 2.0);
        assert_relative_eq!(mid.x(), 0.001, epsilon = 1e-9);
    }

    #[test]
    fn axis_bearing_is_direction_free() {
        let a = [0.0, 0.0];
        let b = [0.001, 0.001];
        assert_relative_eq!(axis_bearing(a, b), axis_bearing(b, a), epsilon = 1e-6);
    }
}
