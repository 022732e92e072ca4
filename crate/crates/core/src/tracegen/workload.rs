use std::ops::Range;

use crate::model::{forward_network, LayerWeights, ModelError, NetworkSpec, Tensor3D, TilingSpec};
use crate::sfc::{fmap_tiles, ofmap_tiling, DeepTileId};

/// Disjoint 4 GiB regions per fmap and per layer's weights, all below 2^48.
pub struct AddressMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Fmap(usize),
    Weights(usize),
    Other,
}

const FMAP_BASE: u64 = 1 << 40;
const WEIGHT_BASE: u64 = 2 << 40;
const REGION: u64 = 1 << 32;

impl AddressMap {
    pub fn fmap(f: usize) -> u64 {
        FMAP_BASE + f as u64 * REGION
    }

    pub fn weights(layer: usize) -> u64 {
        WEIGHT_BASE + layer as u64 * REGION
    }

    pub fn classify(addr: u64) -> Region {
        if (FMAP_BASE..WEIGHT_BASE).contains(&addr) {
            Region::Fmap(((addr - FMAP_BASE) / REGION) as usize)
        } else if (WEIGHT_BASE..3 << 40).contains(&addr) {
            Region::Weights(((addr - WEIGHT_BASE) / REGION) as usize)
        } else {
            Region::Other
        }
    }
}

/// A block of `k × c` kernels read as one transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightTile {
    pub k: Range<usize>,
    pub c: Range<usize>,
}

/// A network, its weights and one input, with every fmap precomputed.
#[derive(Debug, Clone)]
pub struct Workload {
    pub net: NetworkSpec,
    pub weights: Vec<LayerWeights>,
    pub fmaps: Vec<Tensor3D<i8>>,
    tilings: Vec<TilingSpec>,
    tiles: Vec<Vec<DeepTileId>>,
    offsets: Vec<Vec<u64>>,
}

impl Workload {
    pub fn new(
        net: NetworkSpec,
        weights: Vec<LayerWeights>,
        input: &Tensor3D<i8>,
    ) -> Result<Self, ModelError> {
        net.validate()?;
        let fmaps = forward_network(&net, input, &weights)?;
        let l = net.layers.len();
        let tilings: Vec<TilingSpec> = (0..=l)
            .map(|f| {
                if f < l {
                    net.layers[f].tiling
                } else {
                    ofmap_tiling(&net, l - 1)
                }
            })
            .collect();
        let tiles: Vec<Vec<DeepTileId>> = (0..=l)
            .map(|f| fmap_tiles(f, fmaps[f].dims(), &tilings[f]))
            .collect();
        let bpe = net.layers[0].shape.bytes_per_elem as u64;
        let offsets = tiles
            .iter()
            .map(|ts| {
                let mut off = 0u64;
                ts.iter()
                    .map(|t| {
                        let o = off;
                        off += tile_elems(t, &tilings[t.layer], &fmaps[t.layer]) as u64 * bpe;
                        o
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            net,
            weights,
            fmaps,
            tilings,
            tiles,
            offsets,
        })
    }

    pub fn layers(&self) -> usize {
        self.net.layers.len()
    }

    pub fn tiling(&self, f: usize) -> &TilingSpec {
        &self.tilings[f]
    }

    pub fn tiles(&self, f: usize) -> &[DeepTileId] {
        &self.tiles[f]
    }

    fn bpe(&self) -> usize {
        self.net.layers[0].shape.bytes_per_elem
    }

    fn bounds(&self, t: &DeepTileId) -> (Range<usize>, Range<usize>) {
        bounds_of(t, &self.tilings[t.layer], &self.fmaps[t.layer])
    }

    pub fn tile_bytes(&self, f: usize, i: usize) -> Vec<u8> {
        let t = &self.tiles[f][i];
        let (rows, cols) = self.bounds(t);
        let vals = self.fmaps[f].block(
            (t.chan_lo, t.chan_hi),
            (rows.start, rows.end),
            (cols.start, cols.end),
        );
        let bytes: Vec<u8> = vals.iter().map(|&v| v as u8).collect();
        widen(&bytes, self.bpe())
    }

    pub fn tile_dense_size(&self, f: usize, i: usize) -> usize {
        tile_elems(&self.tiles[f][i], &self.tilings[f], &self.fmaps[f]) * self.bpe()
    }

    /// Bitmap of the tile plus its nonzero elements.
    pub fn tile_sparse_size(&self, f: usize, i: usize) -> usize {
        let t = &self.tiles[f][i];
        let (rows, cols) = self.bounds(t);
        let vals = self.fmaps[f].block(
            (t.chan_lo, t.chan_hi),
            (rows.start, rows.end),
            (cols.start, cols.end),
        );
        let nnz = vals.iter().filter(|&&v| v != 0).count();
        vals.len().div_ceil(8) + nnz * self.bpe()
    }

    pub fn tile_addr(&self, f: usize, i: usize) -> u64 {
        AddressMap::fmap(f) + self.offsets[f][i]
    }

    pub fn fmap_dense_total(&self, f: usize) -> u64 {
        self.fmaps[f].data.len() as u64 * self.bpe() as u64
    }

    /// Raster index of the last ifmap deep-tile position that ofmap tile `i`
    /// (a tile of fmap `layer + 1`) depends on.
    pub fn last_needed_position(&self, layer: usize, i: usize) -> usize {
        let sh = &self.net.layers[layer].shape;
        let ti = &self.net.layers[layer].tiling;
        let (rows, cols) = self.bounds(&self.tiles[layer + 1][i]);
        let last_in = |out_end: usize, extent: usize, filt: usize| -> usize {
            let pre = out_end * sh.pool - 1;
            (pre * sh.stride + filt - 1)
                .saturating_sub(sh.pad)
                .min(extent - 1)
        };
        let r = last_in(rows.end, sh.h, sh.r) / ti.th.min(sh.h);
        let c = last_in(cols.end, sh.w, sh.s) / ti.tw.min(sh.w);
        r * ti.tile_cols(sh) + c
    }

    /// Weight tiles covering ofmaps `ks`: `Tk`-sized ofmap groups × `Tc` channel groups.
    pub fn weight_tiles(&self, layer: usize, ks: Range<usize>) -> Vec<WeightTile> {
        let sh = &self.net.layers[layer].shape;
        let ti = &self.net.layers[layer].tiling;
        let mut out = Vec::new();
        let mut k0 = ks.start;
        while k0 < ks.end {
            let k1 = (k0 + ti.tk).min(ks.end);
            let mut c0 = 0;
            while c0 < sh.c {
                let c1 = (c0 + ti.tc).min(sh.c);
                out.push(WeightTile {
                    k: k0..k1,
                    c: c0..c1,
                });
                c0 = c1;
            }
            k0 = k1;
        }
        out
    }

    pub fn weight_bytes(&self, layer: usize, w: &WeightTile) -> Vec<u8> {
        let f = &self.weights[layer].filters;
        let mut out = Vec::new();
        for k in w.k.clone() {
            let kr = &f[k];
            let n = kr.rows * kr.cols;
            out.extend(kr.data[w.c.start * n..w.c.end * n].iter().map(|&v| v as u8));
        }
        widen(&out, self.bpe())
    }

    pub fn weight_sparse_size(&self, layer: usize, w: &WeightTile) -> usize {
        let b = self.weight_bytes(layer, w);
        let bpe = self.bpe();
        let elems = b.len() / bpe;
        let nnz = b.chunks(bpe).filter(|c| c.iter().any(|&x| x != 0)).count();
        elems.div_ceil(8) + nnz * bpe
    }

    pub fn weight_addr(&self, layer: usize, copy: usize, w: &WeightTile) -> u64 {
        let sh = &self.net.layers[layer].shape;
        let per_kernel = (sh.r * sh.s * sh.bytes_per_elem) as u64;
        let copy_off = copy as u64 * sh.weight_bytes() as u64;
        AddressMap::weights(layer) + copy_off + (w.k.start * sh.c + w.c.start) as u64 * per_kernel
    }
}

fn bounds_of(t: &DeepTileId, ti: &TilingSpec, fm: &Tensor3D<i8>) -> (Range<usize>, Range<usize>) {
    let r0 = t.row * ti.th.min(fm.rows);
    let c0 = t.col * ti.tw.min(fm.cols);
    (r0..(r0 + ti.th).min(fm.rows), c0..(c0 + ti.tw).min(fm.cols))
}

fn tile_elems(t: &DeepTileId, ti: &TilingSpec, fm: &Tensor3D<i8>) -> usize {
    let (r, c) = bounds_of(t, ti, fm);
    (t.chan_hi - t.chan_lo) * r.len() * c.len()
}

fn widen(bytes: &[u8], bpe: usize) -> Vec<u8> {
    if bpe == 1 {
        return bytes.to_vec();
    }
    // sign-extend each element to `bpe` little-endian bytes
    bytes
        .iter()
        .flat_map(|&b| {
            let fill = if b & 0x80 != 0 { 0xff } else { 0 };
            std::iter::once(b).chain(std::iter::repeat(fill).take(bpe - 1))
        })
        .collect()
}
