#[path = "support/geometry.rs"]
mod geometry;

#[test]
fn oracle_geometry_suite() {
    let r = geometry::run();
    println!("{r:?}");
    assert_eq!(r.fixed_keypoints, 0.0);
    assert!(r.hinge_distance < 1e-12, "{}", r.hinge_distance);
    assert!(r.prismatic_linearity < 1e-12, "{}", r.prismatic_linearity);
    assert!(r.projection < 1e-6, "{}", r.projection);
    assert!(r.surface < 1e-6, "{}", r.surface);
    assert!(r.surface_pixels > 1000);
}
