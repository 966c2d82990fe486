use ecgscan::layout::{default_layouts, match_layout, LeadMarker};
use proptest::prelude::*;

fn markers(layout: usize, sx: f64, sy: f64, tx: f64, ty: f64, jitter: &[f64], drop: &[usize]) -> Vec<LeadMarker> {
    let l = &default_layouts()[layout];
    l.panels
        .iter()
        .zip(&l.marker_positions)
        .enumerate()
        .filter(|(i, _)| !drop.contains(&(i % l.panels.len())))
        .map(|(i, (p, &(x, y)))| {
            let j = jitter[i % jitter.len()];
            let mx = (tx + sx * x + j).clamp(0.0, 1.0);
            let my = (ty + sy * y - j).clamp(0.0, 1.0);
            LeadMarker::new(p.lead, mx, my, 0.9).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scaled_and_shifted_markers_identify_their_layout(
        layout in 0usize..3,
        sx in 0.8f64..1.0,
        sy in 0.8f64..1.0,
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
        jitter in prop::collection::vec(-0.004f64..0.004, 13),
        drop in prop::collection::vec(0usize..13, 0..=2),
    ) {
        let m = markers(layout, sx, sy, fx * (1.0 - sx), fy * (1.0 - sy), &jitter, &drop);
        let expected = &default_layouts()[layout].name;
        let got = match_layout(&m, &default_layouts()).unwrap();
        prop_assert_eq!(&got.layout.name, expected);
    }
}

#[test]
fn exact_template_costs_nothing() {
    for (i, l) in default_layouts().iter().enumerate() {
        let got = match_layout(&markers(i, 1.0, 1.0, 0.0, 0.0, &[0.0], &[]), &default_layouts()).unwrap();
        assert_eq!(&got.layout.name, &l.name);
        assert!(got.cost < 1e-9, "{}: cost {}", l.name, got.cost);
        assert!(got.missing.is_empty());
    }
}

#[test]
fn too_few_markers_is_an_error() {
    let m = markers(0, 1.0, 1.0, 0.0, 0.0, &[0.0], &(1..13).collect::<Vec<_>>());
    assert_eq!(m.len(), 1);
    assert!(match_layout(&m, &default_layouts()).is_err());
}
