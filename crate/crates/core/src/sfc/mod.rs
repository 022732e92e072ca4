//! One-dimensional tile orders, capacity-constrained execution plans and
//! halo-pixel movement.

mod halo;
mod plan;

pub use halo::{default_halo_budget, halo_plan, south_halo_bytes, HaloPlan, HaloSource};
pub use plan::{
    plan_execution, plan_execution_with, unrolled_weight_stream, ExecutionPlan, PlanCase,
    PlanConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerShape, NetworkSpec, TilingSpec};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SfcError {
    #[error("planning error: {0}")]
    Planning(String),
}

/// A spatial tile of fmap `layer` (the ifmap of that layer) spanning a channel range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeepTileId {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub chan_lo: usize,
    pub chan_hi: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SfcKind {
    Ifmap,
    Filter,
    Ofmap,
    FusedFilter,
    Halo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SfcEntry {
    Tile(DeepTileId),
    Kernel {
        layer: usize,
        k: usize,
        c: usize,
    },
    /// South-halo strip of tile `(row, col)`.
    Halo {
        layer: usize,
        row: usize,
        col: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfcOrder {
    pub kind: SfcKind,
    pub sequence: Vec<SfcEntry>,
}

impl SfcOrder {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn tiles(&self) -> impl Iterator<Item = DeepTileId> + '_ {
        self.sequence.iter().filter_map(|e| match e {
            SfcEntry::Tile(t) => Some(*t),
            _ => None,
        })
    }
}

/// Deep tiles of fmap `fmap` with `channels × rows × cols` under `tiling`,
/// row-major over positions with channel groups innermost.
pub fn fmap_tiles(
    fmap: usize,
    (channels, rows, cols): (usize, usize, usize),
    tiling: &TilingSpec,
) -> Vec<DeepTileId> {
    let (th, tw, tc) = (
        tiling.th.min(rows),
        tiling.tw.min(cols),
        tiling.tc.min(channels),
    );
    let mut out = Vec::new();
    for row in 0..rows.div_ceil(th) {
        for col in 0..cols.div_ceil(tw) {
            for g in 0..channels.div_ceil(tc) {
                out.push(DeepTileId {
                    layer: fmap,
                    row,
                    col,
                    chan_lo: g * tc,
                    chan_hi: ((g + 1) * tc).min(channels),
                });
            }
        }
    }
    out
}

pub fn ifmap_sfc(layer_index: usize, layer: &LayerShape, tiling: &TilingSpec) -> SfcOrder {
    SfcOrder {
        kind: SfcKind::Ifmap,
        sequence: fmap_tiles(layer_index, (layer.c, layer.h, layer.w), tiling)
            .into_iter()
            .map(SfcEntry::Tile)
            .collect(),
    }
}

/// Tiling that layer `i`'s output is written in: the next layer's ifmap
/// tiling, or a clipped copy of layer `i`'s own for the last layer.
pub fn ofmap_tiling(net: &NetworkSpec, i: usize) -> TilingSpec {
    match net.layers.get(i + 1) {
        Some(next) => next.tiling,
        None => {
            let l = &net.layers[i];
            TilingSpec {
                tk: l.tiling.tk,
                tc: l.shape.k.min(l.tiling.tc.max(16)),
                th: l.tiling.th.min(l.shape.out_rows()),
                tw: l.tiling.tw.min(l.shape.out_cols()),
            }
        }
    }
}

/// Ofmap tiles of layer `layer_index`, identified as tiles of fmap `layer_index + 1`.
pub fn ofmap_sfc(layer_index: usize, layer: &LayerShape, out_tiling: &TilingSpec) -> SfcOrder {
    SfcOrder {
        kind: SfcKind::Ofmap,
        sequence: fmap_tiles(
            layer_index + 1,
            (layer.k, layer.out_rows(), layer.out_cols()),
            out_tiling,
        )
        .into_iter()
        .map(SfcEntry::Tile)
        .collect(),
    }
}

/// All `C·K` kernels, every kernel of ofmap 0 before any of ofmap 1.
pub fn filter_sfc(layer_index: usize, layer: &LayerShape) -> SfcOrder {
    SfcOrder {
        kind: SfcKind::Filter,
        sequence: (0..layer.k)
            .flat_map(|k| {
                (0..layer.c).map(move |c| SfcEntry::Kernel {
                    layer: layer_index,
                    k,
                    c,
                })
            })
            .collect(),
    }
}

/// Kernels of layer `a` producing ofmaps `ks`, followed by the kernels of
/// layer `a + 1` that consume exactly those maps.
pub fn fused_filter_sfc(
    a: usize,
    layer_a: &LayerShape,
    ks: std::ops::Range<usize>,
    layer_b: &LayerShape,
) -> SfcOrder {
    let mut sequence = Vec::new();
    for k in ks.clone() {
        for c in 0..layer_a.c {
            sequence.push(SfcEntry::Kernel { layer: a, k, c });
        }
    }
    for k in 0..layer_b.k {
        for c in ks.clone() {
            sequence.push(SfcEntry::Kernel { layer: a + 1, k, c });
        }
    }
    SfcOrder {
        kind: SfcKind::FusedFilter,
        sequence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_sparse, vgg16_32};

    fn pos(o: &SfcOrder) -> Vec<(usize, usize)> {
        o.tiles().map(|t| (t.row, t.col)).collect()
    }

    #[test]
    fn single_tile() {
        let l = LayerShape::same(1, 1, 4, 4, 1, 1);
        let o = ifmap_sfc(0, &l, &TilingSpec::new(1, 1, 4, 4));
        assert_eq!(o.len(), 1);
    }

    #[test]
    fn two_by_two_grid_is_row_major() {
        let l = LayerShape::same(1, 1, 8, 8, 3, 3);
        let o = ifmap_sfc(0, &l, &TilingSpec::new(1, 1, 4, 4));
        assert_eq!(pos(&o), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn channel_groups_innermost() {
        let l = LayerShape::same(1, 4, 8, 8, 3, 3);
        let o = ifmap_sfc(0, &l, &TilingSpec::new(1, 2, 4, 4));
        // oracle: for row { for col { for group } }
        let mut expect = Vec::new();
        for row in 0..2 {
            for col in 0..2 {
                for g in 0..2 {
                    expect.push((row, col, g * 2));
                }
            }
        }
        let got: Vec<_> = o.tiles().map(|t| (t.row, t.col, t.chan_lo)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn filter_order_k_major() {
        let l = LayerShape::same(3, 2, 4, 4, 3, 3);
        let got: Vec<_> = filter_sfc(0, &l)
            .sequence
            .iter()
            .map(|e| match e {
                SfcEntry::Kernel { k, c, .. } => (*k, *c),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
        assert_eq!(filter_sfc(0, &LayerShape::same(1, 1, 1, 1, 1, 1)).len(), 1);
    }

    #[test]
    fn fused_filters_cover_partition_then_consumers() {
        let a = LayerShape::same(4, 2, 8, 8, 3, 3);
        let b = LayerShape::same(3, 4, 8, 8, 3, 3);
        let o = fused_filter_sfc(0, &a, 1..3, &b);
        assert_eq!(o.len(), 2 * 2 + 3 * 2);
        assert_eq!(
            o.sequence[0],
            SfcEntry::Kernel {
                layer: 0,
                k: 1,
                c: 0
            }
        );
        assert_eq!(
            o.sequence[4],
            SfcEntry::Kernel {
                layer: 1,
                k: 0,
                c: 1
            }
        );
    }

    #[test]
    fn ofmap_order_matches_next_ifmap_order() {
        for net in [vgg16_32(), toy_sparse(3)] {
            for i in 0..net.layers.len() - 1 {
                let o = ofmap_sfc(i, &net.layers[i].shape, &ofmap_tiling(&net, i));
                let n = ifmap_sfc(i + 1, &net.layers[i + 1].shape, &net.layers[i + 1].tiling);
                assert_eq!(o.sequence, n.sequence, "layer {i}");
            }
        }
    }

    #[test]
    fn ifmap_order_is_a_permutation() {
        let net = vgg16_32();
        for (i, l) in net.layers.iter().enumerate() {
            let o = ifmap_sfc(i, &l.shape, &l.tiling);
            let mut seen = std::collections::HashSet::new();
            let mut chans = 0;
            for t in o.tiles() {
                assert!(seen.insert(t));
                chans += t.chan_hi - t.chan_lo;
            }
            let positions = l.tiling.tile_rows(&l.shape) * l.tiling.tile_cols(&l.shape);
            assert_eq!(chans, positions * l.shape.c);
        }
    }
}
