use spdekit::darcy::{reconstruct_velocity, solve_pressure, PermeabilityField, StreakGeometry};
use spdekit::mesh::{build_fv_grid, FaceKind, Side};

#[test]
fn streak_flux_follows_the_layered_flow_ratio() {
    let mesh = build_fv_grid(1.0, 1.0, 50, 50).unwrap();
    let perm = PermeabilityField::streaks(&mesh, &StreakGeometry::default()).unwrap();
    let p = solve_pressure(&mesh, &perm).unwrap();
    let v = reconstruct_velocity(&mesh, &perm, &p).unwrap();
    // horizontal flux through the vertical faces at mid-length
    let x_mid = 0.5;
    let mut streak = Vec::new();
    let mut background = Vec::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        if let FaceKind::Interior { lo, .. } = face.kind {
            if face.normal[0] == 1.0 && (face.midpoint[0] - x_mid).abs() < 1e-12 {
                if perm.in_streak[lo] { streak.push(v.flux[f]) } else { background.push(v.flux[f]) }
            }
        }
    }
    assert!(!streak.is_empty() && !background.is_empty());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio = mean(&streak) / mean(&background);
    assert!((ratio / 100.0 - 1.0).abs() < 0.2, "ratio {ratio}");
    assert!(streak.iter().chain(&background).all(|q| *q > 0.0));
}

#[test]
fn streak_field_is_conservative() {
    let mesh = build_fv_grid(2.0, 1.0, 40, 20).unwrap();
    let geometry = StreakGeometry { k_base: 0.01, ..StreakGeometry::default() };
    let perm = PermeabilityField::streaks(&mesh, &geometry).unwrap();
    assert!(perm.values.iter().all(|k| *k == 0.01 || *k == 1.0));
    let v = reconstruct_velocity(&mesh, &perm, &solve_pressure(&mesh, &perm).unwrap()).unwrap();
    let div = v.divergence(&mesh);
    assert!(div.iter().all(|d| d.abs() < 1e-10));
    let (inlet, outlet) = (-v.side_flux(&mesh, Side::Left), v.side_flux(&mesh, Side::Right));
    assert!(inlet > 0.0 && (inlet - outlet).abs() < 1e-10 * inlet);
    assert_eq!(v.side_flux(&mesh, Side::Top), 0.0);
    assert_eq!(v.side_flux(&mesh, Side::Bottom), 0.0);
}
