use super::{LayerShape, LayerWeights, ModelError, NetworkSpec, Tensor3D};

fn check_dims(
    layer: &LayerShape,
    ifmap: &Tensor3D<i8>,
    w: &LayerWeights,
) -> Result<(), ModelError> {
    if ifmap.dims() != (layer.c, layer.h, layer.w) {
        return Err(ModelError::Dimension {
            expected: format!("ifmap {}x{}x{}", layer.c, layer.h, layer.w),
            got: format!("{:?}", ifmap.dims()),
        });
    }
    if w.filters.len() != layer.k {
        return Err(ModelError::Dimension {
            expected: format!("{} filters", layer.k),
            got: format!("{} filters", w.filters.len()),
        });
    }
    if let Some(f) = w
        .filters
        .iter()
        .find(|f| f.dims() != (layer.c, layer.r, layer.s))
    {
        return Err(ModelError::Dimension {
            expected: format!("filter {}x{}x{}", layer.c, layer.r, layer.s),
            got: format!("{:?}", f.dims()),
        });
    }
    Ok(())
}

/// Windowed sum of products, no rectification or pooling: `K × P × Q`.
pub fn conv_pre_activation(
    layer: &LayerShape,
    ifmap: &Tensor3D<i8>,
    weights: &LayerWeights,
) -> Result<Tensor3D<i32>, ModelError> {
    check_dims(layer, ifmap, weights)?;
    let (p, q) = (layer.p(), layer.q());
    let mut out = Tensor3D::<i32>::zeros(layer.k, p, q);
    let pad = layer.pad as isize;
    let st = layer.stride as isize;
    for (k, filt) in weights.filters.iter().enumerate() {
        let obase = k * p * q;
        for c in 0..layer.c {
            for r in 0..layer.r {
                for s in 0..layer.s {
                    let w = filt.get(c, r, s) as i32;
                    if w == 0 {
                        continue;
                    }
                    for oy in 0..p {
                        let iy = oy as isize * st + r as isize - pad;
                        if iy < 0 || iy >= layer.h as isize {
                            continue;
                        }
                        let irow = ifmap.idx(c, iy as usize, 0);
                        let orow = obase + oy * q;
                        for ox in 0..q {
                            let ix = ox as isize * st + s as isize - pad;
                            if ix < 0 || ix >= layer.w as isize {
                                continue;
                            }
                            let v = ifmap.data[irow + ix as usize] as i32;
                            out.data[orow + ox] += w * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Convolution, ReLU, then `pool × pool` max-pooling with stride `pool`.
pub fn conv_forward(
    layer: &LayerShape,
    ifmap: &Tensor3D<i8>,
    weights: &LayerWeights,
) -> Result<Tensor3D<i32>, ModelError> {
    let pre = conv_pre_activation(layer, ifmap, weights)?;
    let pool = layer.pool;
    let (pr, pc) = (layer.out_rows(), layer.out_cols());
    let mut out = Tensor3D::<i32>::zeros(layer.k, pr, pc);
    for k in 0..layer.k {
        for y in 0..pr {
            for x in 0..pc {
                let mut m = 0i32;
                for dy in 0..pool {
                    for dx in 0..pool {
                        m = m.max(pre.get(k, y * pool + dy, x * pool + dx));
                    }
                }
                out.set(k, y, x, m);
            }
        }
    }
    Ok(out)
}

/// Right-shift applied to accumulators before narrowing to 8 bits.
pub fn requant_shift(layer: &LayerShape) -> u32 {
    let fanin = (layer.c * layer.r * layer.s) as f64;
    let scale = fanin.sqrt() * 64.0 * 73.0 / 32.0;
    scale.log2().floor().max(0.0) as u32
}

/// Narrows an accumulator to `i8`; nonzero stays nonzero.
pub fn requantize(acc: i32, shift: u32) -> i8 {
    if acc == 0 {
        return 0;
    }
    let mag = (acc.unsigned_abs() >> shift).clamp(1, 127) as i8;
    if acc < 0 {
        -mag
    } else {
        mag
    }
}

/// Runs every layer and returns `[input, out_1, …, out_L]`.
pub fn forward_network(
    net: &NetworkSpec,
    input: &Tensor3D<i8>,
    weights: &[LayerWeights],
) -> Result<Vec<Tensor3D<i8>>, ModelError> {
    if weights.len() != net.layers.len() {
        return Err(ModelError::Dimension {
            expected: format!("{} weight sets", net.layers.len()),
            got: format!("{}", weights.len()),
        });
    }
    let mut fmaps = vec![input.clone()];
    for (spec, w) in net.layers.iter().zip(weights) {
        let acc = conv_forward(&spec.shape, fmaps.last().expect("non-empty"), w)?;
        let shift = requant_shift(&spec.shape);
        let data = acc.data.iter().map(|&a| requantize(a, shift)).collect();
        fmaps.push(Tensor3D::from_vec(acc.channels, acc.rows, acc.cols, data)?);
    }
    Ok(fmaps)
}
