use serde::{Deserialize, Serialize};

use super::{SfcEntry, SfcKind, SfcOrder};
use crate::model::{LayerShape, TilingSpec};

/// Pixels tile `tile` receives from the already-visited neighbour `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaloSource {
    pub tile: (usize, usize),
    pub from: (usize, usize),
    /// `(rows, cols)` of the strip, all channels.
    pub strip: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HaloPlan {
    pub sources: Vec<HaloSource>,
    /// South halos spilled off chip; written during row `i`, read in the same order during row `i+1`.
    pub overflow: Option<SfcOrder>,
}

impl HaloPlan {
    pub fn sources_of(&self, tile: (usize, usize)) -> Vec<(usize, usize)> {
        self.sources
            .iter()
            .filter(|s| s.tile == tile)
            .map(|s| s.from)
            .collect()
    }
}

/// Bytes of south halo one tile row leaves behind: `(R−1)·W·C` elements.
pub fn south_halo_bytes(layer: &LayerShape) -> usize {
    (layer.r - 1) * layer.w * layer.c * layer.bytes_per_elem
}

/// Default on-chip halo budget: two full pixel rows of the ifmap.
pub fn default_halo_budget(layer: &LayerShape) -> usize {
    2 * layer.w * layer.c * layer.bytes_per_elem
}

/// Halo movement for a row-major tile walk.
///
/// West strips are `(Th + R−1) × (S−1)` (the north-west corner travels with
/// them), north strips `(R−1) × Tw`. If a row's south halos exceed `budget`,
/// all of them go through an overflow order.
pub fn halo_plan(
    layer_index: usize,
    layer: &LayerShape,
    tiling: &TilingSpec,
    budget: usize,
) -> HaloPlan {
    if layer.r <= 1 && layer.s <= 1 {
        return HaloPlan::default();
    }
    let (rows, cols) = (tiling.tile_rows(layer), tiling.tile_cols(layer));
    let mut sources = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let th = tiling.th.min(layer.h - row * tiling.th);
            let tw = tiling.tw.min(layer.w - col * tiling.tw);
            if col > 0 && layer.s > 1 {
                let corner = if row > 0 { layer.r - 1 } else { 0 };
                sources.push(HaloSource {
                    tile: (row, col),
                    from: (row, col - 1),
                    strip: (th + corner, layer.s - 1),
                });
            }
            if row > 0 && layer.r > 1 {
                sources.push(HaloSource {
                    tile: (row, col),
                    from: (row - 1, col),
                    strip: (layer.r - 1, tw),
                });
            }
        }
    }
    let overflow =
        (layer.r > 1 && south_halo_bytes(layer) > budget && rows > 1).then(|| SfcOrder {
            kind: SfcKind::Halo,
            sequence: (0..rows - 1)
                .flat_map(|row| {
                    (0..cols).map(move |col| SfcEntry::Halo {
                        layer: layer_index,
                        row,
                        col,
                    })
                })
                .collect(),
        });
    HaloPlan { sources, overflow }
}
