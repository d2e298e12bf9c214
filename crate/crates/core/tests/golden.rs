//! Golden-file checks for the rendered outputs.
//!
//! The fixture field is built from integer arithmetic only (no
//! transcendentals, no RNG), so the bytes are identical on any platform
//! that rounds f32 correctly. The golden files were captured from the
//! first verified run and committed.

use searecon_core::metrics::{render_heatmap_pgm, render_layer_csv, HeatmapScale};
use searecon_core::synth::{GridField, NormState};

fn fixture_field() -> GridField {
    let (l, h, w) = (2usize, 6usize, 9usize);
    let hw = h * w;
    let land_mask: Vec<u8> = (0..hw).map(|c| u8::from(c % 7 == 3)).collect();
    let mut data = vec![0.0f32; l * hw];
    for layer in 0..l {
        for c in 0..hw {
            data[layer * hw + c] = if land_mask[c] == 1 {
                -9999.0
            } else {
                // exact in f32: small integers over 8
                ((c as i32 * 5 % 23 - 11) as f32 + layer as f32 * 3.0) / 8.0
            };
        }
    }
    GridField { layers: l, height: h, width: w, data, land_mask, norm_state: NormState::Physical, stats: None }
}

#[test]
fn heatmap_bytes_match_golden() {
    let field = fixture_field();
    let minmax = render_heatmap_pgm(&field, 0, HeatmapScale::MinMax).unwrap();
    let symmetric = render_heatmap_pgm(&field, 1, HeatmapScale::Symmetric).unwrap();
    assert_eq!(minmax, include_bytes!("golden/heatmap_minmax.pgm"), "min/max heatmap drifted");
    assert_eq!(symmetric, include_bytes!("golden/heatmap_symmetric.pgm"), "symmetric heatmap drifted");
}

#[test]
fn layer_csv_matches_golden() {
    let field = fixture_field();
    let csv = render_layer_csv(&field, 0).unwrap();
    assert_eq!(csv, include_str!("golden/layer0.csv"), "layer CSV drifted");
}
