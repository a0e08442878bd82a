use modeboost::ingest::{assign_regions, parse_snapshots, RegionSet};
use modeboost::series::{DemandPanel, GapPolicy};

const REGIONS: &str = r#"{
  "type": "FeatureCollection",
  "features": [
    {"type": "Feature", "properties": {"name": "west"},
     "geometry": {"type": "Polygon", "coordinates": [[[4.0, 52.0], [4.5, 52.0], [4.5, 52.5], [4.0, 52.5], [4.0, 52.0]]]}},
    {"type": "Feature", "properties": {"name": "east"},
     "geometry": {"type": "MultiPolygon", "coordinates": [[[[4.5, 52.0], [5.0, 52.0], [5.0, 52.5], [4.5, 52.5], [4.5, 52.0]]]]}}
  ]
}"#;

#[test]
fn snapshots_become_a_regional_panel() {
    let csv = "\
timestamp,lat,lon,vehicle_type,operator
2023-03-01T08:00:10,52.2,4.2,bicycle,acme
2023-03-01T08:00:50,52.3,4.3,e-scooter,acme
2023-03-01T08:01:05,52.2,4.7,ebike,zoom
2023-03-01T08:03:00,52.2,4.7,bike,zoom
2023-03-01T08:03:00,60.0,4.7,bike,zoom
2023-03-01T08:03:00,not-a-number,4.7,bike,zoom
2023-03-01T08:03:00,52.2,4.7,hoverboard,zoom
";
    let (records, report) = parse_snapshots(csv.as_bytes()).unwrap();
    assert_eq!((report.rows, report.kept, report.skipped), (7, 5, 2));

    let regions = RegionSet::from_geojson(REGIONS).unwrap();
    let (observations, outside) = assign_regions(&records, &regions).unwrap();
    assert_eq!(outside, 1);

    let panel = DemandPanel::aggregate(&observations, GapPolicy::Zero).unwrap();
    assert_eq!(panel.len(), 4);
    assert_eq!(panel.by_name("west").unwrap().values, vec![2.0, 0.0, 0.0, 0.0]);
    assert_eq!(panel.by_name("east").unwrap().values, vec![0.0, 1.0, 0.0, 1.0]);

    let filled = DemandPanel::aggregate(&observations, GapPolicy::ForwardFill).unwrap();
    assert_eq!(filled.by_name("east").unwrap().values, vec![0.0, 1.0, 1.0, 1.0]);

    let mut buf = Vec::new();
    panel.write_csv(&mut buf).unwrap();
    assert_eq!(DemandPanel::read_csv(buf.as_slice()).unwrap(), panel);
}
