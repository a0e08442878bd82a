//! Named polygons loaded from GeoJSON and point-in-polygon assignment.
//!
//! Containment uses even-odd ray casting. Points lying on any ring edge
//! (including vertices) count as inside the polygon; hole boundaries belong
//! to the polygon as well.

use serde_json::Value;

use crate::error::{Error, Result};

/// A closed ring of `(lon, lat)` vertices; the closing vertex is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring(Vec<(f64, f64)>);

impl Ring {
    pub fn new(mut points: Vec<(f64, f64)>) -> Self {
        if points.len() > 1 && points.first() == points.last() {
            points.pop();
        }
        Ring(points)
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.0
    }

    fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        let n = self.0.len();
        (0..n).map(move |i| (self.0[i], self.0[(i + 1) % n]))
    }

    fn distinct_vertices(&self) -> usize {
        let mut v = self.0.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        v.dedup();
        v.len()
    }

    pub fn on_boundary(&self, x: f64, y: f64) -> bool {
        self.edges().any(|((x1, y1), (x2, y2))| {
            let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
            cross == 0.0 && x >= x1.min(x2) && x <= x1.max(x2) && y >= y1.min(y2) && y <= y1.max(y2)
        })
    }

    /// Even-odd crossing test for a point not on the boundary.
    pub fn crosses_odd(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ((x1, y1), (x2, y2)) in self.edges() {
            if (y1 > y) != (y2 > y) {
                let x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
                if x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if self.exterior.on_boundary(x, y) || self.holes.iter().any(|h| h.on_boundary(x, y)) {
            return true;
        }
        self.exterior.crosses_odd(x, y) && !self.holes.iter().any(|h| h.crosses_odd(x, y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub polygons: Vec<Polygon>,
}

/// Regions in file order; lookup returns the first containing region.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionSet {
    regions: Vec<Region>,
}

impl RegionSet {
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        for r in &regions {
            let rings = r.polygons.iter().flat_map(|p| std::iter::once(&p.exterior).chain(&p.holes));
            for ring in rings {
                if ring.distinct_vertices() < 3 {
                    return Err(Error::DegeneratePolygon(r.name.clone()));
                }
            }
            if r.polygons.is_empty() {
                return Err(Error::DegeneratePolygon(r.name.clone()));
            }
        }
        Ok(Self { regions })
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn locate(&self, lon: f64, lat: f64) -> Option<&str> {
        self.regions
            .iter()
            .find(|r| r.polygons.iter().any(|p| p.contains(lon, lat)))
            .map(|r| r.name.as_str())
    }

    /// Parses a FeatureCollection of Polygon / MultiPolygon features, each
    /// carrying a `name` property.
    pub fn from_geojson(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::MalformedGeoJson(m.to_string());
        let doc: Value = serde_json::from_str(text)?;
        let features = doc
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("expected a FeatureCollection with a features array"))?;
        let mut regions = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let name = f
                .pointer("/properties/name")
                .and_then(Value::as_str)
                .ok_or_else(|| bad(&format!("feature {i} has no name property")))?
                .to_string();
            let geom = f.get("geometry").ok_or_else(|| bad(&format!("feature {i} has no geometry")))?;
            let coords = geom.get("coordinates").ok_or_else(|| bad("geometry without coordinates"))?;
            let polygons = match geom.get("type").and_then(Value::as_str) {
                Some("Polygon") => vec![parse_polygon(coords)?],
                Some("MultiPolygon") => coords
                    .as_array()
                    .ok_or_else(|| bad("MultiPolygon coordinates must be an array"))?
                    .iter()
                    .map(parse_polygon)
                    .collect::<Result<_>>()?,
                other => return Err(bad(&format!("unsupported geometry type {other:?}"))),
            };
            regions.push(Region { name, polygons });
        }
        Self::new(regions)
    }
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let bad = || Error::MalformedGeoJson("polygon rings must be arrays of [lon, lat] pairs".into());
    let mut rings = v
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|pt| match pt.as_array().map(Vec::as_slice) {
                    Some([x, y, ..]) => Ok((x.as_f64().ok_or_else(bad)?, y.as_f64().ok_or_else(bad)?)),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()
                .map(Ring::new)
        })
        .collect::<Result<Vec<_>>>()?;
    if rings.is_empty() {
        return Err(bad());
    }
    let exterior = rings.remove(0);
    Ok(Polygon { exterior, holes: rings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn square(name: &str, x0: f64, y0: f64, side: f64) -> Region {
        Region {
            name: name.into(),
            polygons: vec![Polygon {
                exterior: Ring::new(vec![(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side), (x0, y0)]),
                holes: vec![],
            }],
        }
    }

    /// Brute-force winding number: sums signed angles subtended by each edge.
    fn winding_number(ring: &[(f64, f64)], x: f64, y: f64) -> i32 {
        let n = ring.len();
        let mut total = 0.0;
        for i in 0..n {
            let (x1, y1) = (ring[i].0 - x, ring[i].1 - y);
            let (x2, y2) = (ring[(i + 1) % n].0 - x, ring[(i + 1) % n].1 - y);
            total += (x1 * y2 - y1 * x2).atan2(x1 * x2 + y1 * y2);
        }
        (total / std::f64::consts::TAU).round() as i32
    }

    #[test]
    fn inside_outside_and_boundary() {
        let set = RegionSet::new(vec![square("unit", 0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(set.locate(0.5, 0.5), Some("unit"));
        assert_eq!(set.locate(2.0, 2.0), None);
        assert_eq!(set.locate(1.0, 1.0), Some("unit"));
        assert_eq!(set.locate(0.0, 0.3), Some("unit"));
        assert_eq!(set.locate(0.5, 0.0), Some("unit"));
    }

    #[test]
    fn first_match_wins_on_overlap() {
        let set = RegionSet::new(vec![square("a", 0.0, 0.0, 2.0), square("b", 1.0, 1.0, 2.0)]).unwrap();
        assert_eq!(set.locate(1.5, 1.5), Some("a"));
        assert_eq!(set.locate(2.5, 2.5), Some("b"));
    }

    #[test]
    fn holes_are_excluded_but_their_edges_are_not() {
        let mut r = square("donut", 0.0, 0.0, 4.0);
        r.polygons[0].holes.push(Ring::new(vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0)]));
        let set = RegionSet::new(vec![r]).unwrap();
        assert_eq!(set.locate(2.0, 2.0), None);
        assert_eq!(set.locate(0.5, 2.0), Some("donut"));
        assert_eq!(set.locate(1.0, 2.0), Some("donut"));
    }

    #[test]
    fn degenerate_ring_is_rejected() {
        let r = Region {
            name: "line".into(),
            polygons: vec![Polygon {
                exterior: Ring::new(vec![(0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]),
                holes: vec![],
            }],
        };
        assert!(matches!(RegionSet::new(vec![r]), Err(Error::DegeneratePolygon(n)) if n == "line"));
    }

    #[test]
    fn geojson_feature_collection() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"name":"Centrum"},
             "geometry":{"type":"Polygon","coordinates":[[[4.8,52.3],[4.95,52.3],[4.95,52.4],[4.8,52.4],[4.8,52.3]]]}},
            {"type":"Feature","properties":{"name":"Noord"},
             "geometry":{"type":"MultiPolygon","coordinates":[[[[4.8,52.4],[4.95,52.4],[4.95,52.5],[4.8,52.4]]]]}}
        ]}"#;
        let set = RegionSet::from_geojson(text).unwrap();
        assert_eq!(set.regions().len(), 2);
        assert_eq!(set.locate(4.89, 52.37), Some("Centrum"));
        assert_eq!(set.locate(0.0, 0.0), None);
        assert!(RegionSet::from_geojson(r#"{"type":"FeatureCollection","features":[{"geometry":null}]}"#).is_err());
    }

    #[test]
    fn ray_casting_agrees_with_winding_number() {
        let polys: Vec<Vec<(f64, f64)>> = vec![
            vec![(0.0, 0.0), (4.0, 0.0), (4.0, 1.0), (1.0, 1.0), (1.0, 3.0), (4.0, 3.0), (4.0, 4.0), (0.0, 4.0)],
            vec![(0.0, 0.0), (3.0, 1.0), (5.0, 0.0), (4.0, 3.0), (5.0, 5.0), (2.5, 4.0), (0.0, 5.0), (1.0, 2.5)],
            vec![(0.3, 0.1), (4.7, 0.4), (2.2, 4.9)],
        ];
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        for ring in polys {
            let poly = Polygon { exterior: Ring::new(ring.clone()), holes: vec![] };
            for _ in 0..10_000 {
                let (x, y) = (rng.random_range(-0.5..5.5), rng.random_range(-0.5..5.5));
                if poly.exterior.on_boundary(x, y) {
                    continue;
                }
                assert_eq!(poly.contains(x, y), winding_number(&ring, x, y) != 0, "({x}, {y})");
            }
            for &(vx, vy) in &ring {
                assert!(poly.contains(vx, vy));
            }
        }
    }
}
