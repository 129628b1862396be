//! Region registry, great-circle distances and radius neighbor graphs.
//!
//! Neighborhoods are defined purely by centroid distance: two regions are
//! neighbors when their centroids lie within `radius_km` of each other.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("unknown region {0:?}")]
    UnknownRegion(String),
    #[error("duplicate region id {0:?}")]
    DuplicateRegion(String),
    #[error("region {id:?}: coordinate out of range (lat {lat}, lon {lon})")]
    BadCoordinate { id: String, lat: f64, lon: f64 },
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "region_id")]
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub population: u64,
}

impl Region {
    pub fn centroid(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Regions sorted by id, with unique ids and valid coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionRegistry {
    regions: Vec<Region>,
}

impl RegionRegistry {
    pub fn new(mut regions: Vec<Region>) -> Result<Self, GeoError> {
        regions.sort_by(|a, b| a.id.cmp(&b.id));
        for w in regions.windows(2) {
            if w[0].id == w[1].id {
                return Err(GeoError::DuplicateRegion(w[0].id.clone()));
            }
        }
        for r in &regions {
            if !r.centroid().is_valid() {
                return Err(GeoError::BadCoordinate {
                    id: r.id.clone(),
                    lat: r.lat,
                    lon: r.lon,
                });
            }
        }
        Ok(Self { regions })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeoError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let regions = rdr.deserialize().collect::<Result<Vec<Region>, _>>()?;
        Self::new(regions)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.regions {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| GeoError::Csv(e.into()))?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Region> {
        self.regions
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.regions[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// All regions other than `center` whose centroid is within `radius_km`.
pub fn neighbors_within(registry: &RegionRegistry, center: &str, radius_km: f64) -> Result<BTreeSet<String>, GeoError> {
    let c = registry
        .get(center)
        .ok_or_else(|| GeoError::UnknownRegion(center.to_string()))?
        .centroid();
    Ok(registry
        .regions()
        .iter()
        .filter(|r| r.id != center && haversine_km(c, r.centroid()) <= radius_km)
        .map(|r| r.id.clone())
        .collect())
}

/// Symmetric radius neighbor sets over a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    radius_km: f64,
    neighbors: BTreeMap<String, BTreeSet<String>>,
}

impl AdjacencyGraph {
    /// Pairwise construction. Each unordered pair is measured once and
    /// inserted in both directions.
    pub fn build(registry: &RegionRegistry, radius_km: f64) -> Result<Self, GeoError> {
        if !(radius_km > 0.0 && radius_km.is_finite()) {
            return Err(GeoError::BadRadius(radius_km));
        }
        let regions = registry.regions();
        let mut neighbors: BTreeMap<String, BTreeSet<String>> =
            regions.iter().map(|r| (r.id.clone(), BTreeSet::new())).collect();
        for (i, a) in regions.iter().enumerate() {
            for b in &regions[i + 1..] {
                if haversine_km(a.centroid(), b.centroid()) <= radius_km {
                    neighbors.get_mut(&a.id).unwrap().insert(b.id.clone());
                    neighbors.get_mut(&b.id).unwrap().insert(a.id.clone());
                }
            }
        }
        Ok(Self { radius_km, neighbors })
    }

    pub fn radius_km(&self) -> f64 {
        self.radius_km
    }

    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.neighbors.get(id)
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.neighbors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Debug export, one line per directed edge.
    pub fn write_csv<W: Write>(&self, registry: &RegionRegistry, writer: W) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["region_id", "neighbor_id", "distance_km"])?;
        for (id, ns) in &self.neighbors {
            let a = registry.get(id).ok_or_else(|| GeoError::UnknownRegion(id.clone()))?;
            for n in ns {
                let b = registry.get(n).ok_or_else(|| GeoError::UnknownRegion(n.clone()))?;
                let d = haversine_km(a.centroid(), b.centroid());
                w.write_record([id.as_str(), n.as_str(), &format!("{d:.6}")])?;
            }
        }
        w.flush().map_err(|e| GeoError::Csv(e.into()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn region(id: &str, lat: f64, lon: f64) -> Region {
        Region {
            id: id.into(),
            lat,
            lon,
            population: 1000,
        }
    }

    fn grid3() -> RegionRegistry {
        let mut v = Vec::new();
        for (i, lat) in [-1.0, 0.0, 1.0].iter().enumerate() {
            for (j, lon) in [-1.0, 0.0, 1.0].iter().enumerate() {
                v.push(region(&format!("c{i}{j}"), *lat, *lon));
            }
        }
        RegionRegistry::new(v).unwrap()
    }

    // Independent oracle: spherical law of cosines.
    fn cosine_law_km(a: LatLon, b: LatLon) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_KM * c.acos()
    }

    #[test]
    fn haversine_examples() {
        let a = LatLon::new(40.0, -75.0);
        assert_eq!(haversine_km(a, a), 0.0);
        let d = haversine_km(LatLon::new(0.0, 0.0), LatLon::new(0.0, 180.0));
        assert!((d - std::f64::consts::PI * 6371.0).abs() < 1e-6);
        assert!((d - 20015.1).abs() < 0.1);
        let d = haversine_km(a, LatLon::new(41.0, -75.0));
        // one degree of latitude: 6371 · π/180
        assert!((d - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert!((d - 111.19).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn haversine_matches_cosine_law_and_triangle(
            la in -89.0f64..89.0, lo in -179.0f64..179.0,
            lb in -89.0f64..89.0, mb in -179.0f64..179.0,
            lc in -89.0f64..89.0, mc in -179.0f64..179.0,
        ) {
            let (a, b, c) = (LatLon::new(la, lo), LatLon::new(lb, mb), LatLon::new(lc, mc));
            let ab = haversine_km(a, b);
            prop_assert!((ab - cosine_law_km(a, b)).abs() < 1e-3);
            prop_assert!((ab - haversine_km(b, a)).abs() < 1e-9);
            let (bc, ac) = (haversine_km(b, c), haversine_km(a, c));
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-9) + 1e-9);
        }
    }

    #[test]
    fn neighbors_on_unit_grid() {
        let reg = grid3();
        assert!(neighbors_within(&reg, "c11", 0.0).unwrap().is_empty());
        // Brute-force oracle over the eight candidates.
        let center = reg.get("c11").unwrap().centroid();
        let oracle = |r: f64| -> BTreeSet<String> {
            reg.regions()
                .iter()
                .filter(|x| x.id != "c11" && haversine_km(center, x.centroid()) <= r)
                .map(|x| x.id.clone())
                .collect()
        };
        // Edge-adjacent cells sit at 111.19 km, diagonal cells at 157.25 km.
        let edge: BTreeSet<String> = ["c01", "c10", "c12", "c21"].iter().map(|s| s.to_string()).collect();
        assert_eq!(neighbors_within(&reg, "c11", 120.0).unwrap(), edge);
        assert_eq!(oracle(120.0), edge);
        // 1.5 degrees of arc (166.8 km) also reaches the diagonals.
        let r15 = 1.5 * EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        assert_eq!(neighbors_within(&reg, "c11", r15).unwrap(), oracle(r15));
        assert_eq!(neighbors_within(&reg, "c11", r15).unwrap().len(), 8);
        assert_eq!(neighbors_within(&reg, "c11", 1e5).unwrap().len(), 8);
        assert!(matches!(neighbors_within(&reg, "zz", 10.0), Err(GeoError::UnknownRegion(_))));
    }

    #[test]
    fn adjacency_single_and_errors() {
        let reg = RegionRegistry::new(vec![region("a", 0.0, 0.0)]).unwrap();
        let g = AdjacencyGraph::build(&reg, 50.0).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.neighbors("a").unwrap().is_empty());
        assert!(AdjacencyGraph::build(&reg, 0.0).is_err());
        assert!(AdjacencyGraph::build(&reg, -1.0).is_err());
    }

    #[test]
    fn registry_validation() {
        assert!(matches!(
            RegionRegistry::new(vec![region("a", 0.0, 0.0), region("a", 1.0, 1.0)]),
            Err(GeoError::DuplicateRegion(_))
        ));
        assert!(matches!(RegionRegistry::new(vec![region("a", 91.0, 0.0)]), Err(GeoError::BadCoordinate { .. })));
        let csv_text = "region_id,lat,lon,population\nb,1.0,2.0,10\na,0.5,0.5,0\n";
        let reg = RegionRegistry::read_csv(csv_text.as_bytes()).unwrap();
        assert_eq!(reg.regions()[0].id, "a");
        assert_eq!(reg.get("a").unwrap().population, 0);
        let mut out = Vec::new();
        reg.write_csv(&mut out).unwrap();
        assert_eq!(RegionRegistry::read_csv(out.as_slice()).unwrap(), reg);
    }

    #[test]
    fn adjacency_export() {
        let reg = grid3();
        let g = AdjacencyGraph::build(&reg, 120.0).unwrap();
        let mut out = Vec::new();
        g.write_csv(&reg, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "region_id,neighbor_id,distance_km");
        // 12 undirected edges in a 3x3 grid, exported in both directions
        assert_eq!(lines.len(), 1 + 24);
    }

    fn registry_strategy() -> impl Strategy<Value = RegionRegistry> {
        proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60).prop_map(|pts| {
            RegionRegistry::new(
                pts.into_iter()
                    .enumerate()
                    .map(|(i, (lat, lon))| region(&format!("{i:03}"), lat, lon))
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn adjacency_matches_brute_force(reg in registry_strategy(), r1 in 1.0f64..400.0, extra in 0.0f64..400.0) {
            let g1 = AdjacencyGraph::build(&reg, r1).unwrap();
            let g2 = AdjacencyGraph::build(&reg, r1 + extra).unwrap();
            for a in reg.regions() {
                let n1 = g1.neighbors(&a.id).unwrap();
                prop_assert_eq!(n1, &neighbors_within(&reg, &a.id, r1).unwrap());
                prop_assert!(!n1.contains(&a.id));
                prop_assert!(n1.is_subset(g2.neighbors(&a.id).unwrap()));
                for b in n1 {
                    prop_assert!(g1.neighbors(b).unwrap().contains(&a.id));
                }
            }
        }
    }
}
