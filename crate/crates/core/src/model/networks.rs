use super::{LayerShape, LayerSpec, ModelError, NetworkSpec, TilingSpec};

/// Published ifmap volumes for the first five rank-experiment layers of the
/// 224×224 network. The third entry is not a product of any layer's
/// dimensions (128·56·56 = 401408); it is kept verbatim.
pub const REFERENCE_VGG16_IFMAP_VOLUMES: [u64; 5] = [150_528, 802_816, 401_428, 802_816, 200_704];

const VGG_CHANNELS: [usize; 13] = [
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512,
];
const VGG_POOL_AFTER: [usize; 5] = [1, 3, 6, 9, 12];

fn vgg(input: usize, tile: usize, sparsity: f64) -> Vec<LayerSpec> {
    let mut c = 3;
    let mut hw = input;
    let mut out = Vec::with_capacity(13);
    for (i, &k) in VGG_CHANNELS.iter().enumerate() {
        let pool = if VGG_POOL_AFTER.contains(&i) { 2 } else { 1 };
        let shape = LayerShape::same(k, c, hw, hw, 3, 3).with_pool(pool);
        let t = tile.min(hw);
        out.push(LayerSpec {
            shape,
            tiling: TilingSpec::new(k.min(32), c.min(16), t, t),
            sparsity: if i == 0 { 0.0 } else { sparsity },
        });
        c = k;
        hw /= pool;
    }
    out
}

/// VGG-16's convolutional stack scaled to a 3×32×32 input.
///
/// The second layer's ifmap is tiled 2 channels × 5×5 pixels so the first
/// layer writes 32·7·7 = 1568 tiles.
pub fn vgg16_32() -> NetworkSpec {
    let mut layers = vgg(32, 8, 0.5);
    layers[1].tiling = TilingSpec::new(32, 2, 5, 5);
    NetworkSpec {
        name: "vgg16-32".into(),
        layers,
        skips: vec![],
    }
}

/// Full-size VGG-16 convolutional stack (3×224×224 input).
pub fn vgg16() -> NetworkSpec {
    NetworkSpec {
        name: "vgg16".into(),
        layers: vgg(224, 28, 0.5),
        skips: vec![],
    }
}

/// Four stride-1 layers on a 1×64×64 input, all with `filter × filter` kernels.
pub fn toy_sparse(filter: usize) -> NetworkSpec {
    let ks = [8, 16, 16, 32];
    let mut c = 1;
    let layers = ks
        .iter()
        .map(|&k| {
            let shape = LayerShape::same(k, c, 64, 64, filter, filter);
            c = k;
            LayerSpec {
                shape,
                tiling: TilingSpec::new(8, shape.c, 16, 16),
                sparsity: 0.5,
            }
        })
        .collect();
    NetworkSpec {
        name: format!("toy-sparse-s{filter}"),
        layers,
        skips: vec![],
    }
}

/// Looks up a shipped network: `vgg16`, `vgg16-32`, `toy-sparse` or `toy-sparse-s<N>`.
pub fn by_name(name: &str) -> Result<NetworkSpec, ModelError> {
    match name {
        "vgg16" => Ok(vgg16()),
        "vgg16-32" => Ok(vgg16_32()),
        "toy-sparse" => Ok(toy_sparse(3)),
        other => other
            .strip_prefix("toy-sparse-s")
            .and_then(|f| f.parse::<usize>().ok())
            .filter(|f| f % 2 == 1 && *f <= 15)
            .map(toy_sparse)
            .ok_or_else(|| ModelError::UnknownNetwork(other.to_string())),
    }
}
