use serde::{Deserialize, Serialize};

use super::ModelError;

/// Geometry of one convolution layer.
///
/// `p`/`q` are derived from the input size, filter, stride and padding; the
/// layer's written output is `k × p/pool × q/pool`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub k: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub pad: usize,
    pub pool: usize,
    pub bytes_per_elem: usize,
}

impl LayerShape {
    /// Stride-1 "same" convolution with one byte per element and no pooling.
    pub fn same(k: usize, c: usize, h: usize, w: usize, r: usize, s: usize) -> Self {
        Self {
            k,
            c,
            h,
            w,
            r,
            s,
            stride: 1,
            pad: r.saturating_sub(1) / 2,
            pool: 1,
            bytes_per_elem: 1,
        }
    }

    pub fn with_pool(mut self, pool: usize) -> Self {
        self.pool = pool;
        self
    }

    pub fn p(&self) -> usize {
        (self.h + 2 * self.pad - self.r) / self.stride + 1
    }

    pub fn q(&self) -> usize {
        (self.w + 2 * self.pad - self.s) / self.stride + 1
    }

    /// Rows of the pooled output.
    pub fn out_rows(&self) -> usize {
        self.p() / self.pool
    }

    pub fn out_cols(&self) -> usize {
        self.q() / self.pool
    }

    pub fn ifmap_bytes(&self) -> usize {
        self.c * self.h * self.w * self.bytes_per_elem
    }

    pub fn kernel_bytes(&self) -> usize {
        self.r * self.s * self.bytes_per_elem
    }

    /// Bytes of all `C` kernels feeding one output map.
    pub fn filter_bytes_per_ofmap(&self) -> usize {
        self.c * self.kernel_bytes()
    }

    pub fn weight_bytes(&self) -> usize {
        self.k * self.filter_bytes_per_ofmap()
    }

    pub fn ofmap_bytes(&self) -> usize {
        self.k * self.out_rows() * self.out_cols() * self.bytes_per_elem
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("k", self.k),
            ("c", self.c),
            ("h", self.h),
            ("w", self.w),
            ("r", self.r),
            ("s", self.s),
            ("stride", self.stride),
            ("pool", self.pool),
            ("bytes_per_elem", self.bytes_per_elem),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Shape(format!("{name} must be >= 1")));
        }
        if self.r > self.h + 2 * self.pad || self.s > self.w + 2 * self.pad {
            return Err(ModelError::Shape(format!(
                "filter {}x{} larger than padded input {}x{}",
                self.r,
                self.s,
                self.h + 2 * self.pad,
                self.w + 2 * self.pad
            )));
        }
        if self.p() % self.pool != 0 || self.q() % self.pool != 0 {
            return Err(ModelError::Shape(format!(
                "pool {} does not divide output {}x{}",
                self.pool,
                self.p(),
                self.q()
            )));
        }
        Ok(())
    }
}

/// Bytes of the input feature maps, `C·H·W·bytes_per_elem`.
pub fn ifmap_volume(layer: &LayerShape) -> usize {
    layer.ifmap_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingSpec {
    pub tk: usize,
    pub tc: usize,
    pub th: usize,
    pub tw: usize,
}

/// Accepted range of `th·tw·tc·bytes_per_elem`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileBand {
    pub min_bytes: usize,
    pub max_bytes: usize,
}

impl Default for TileBand {
    fn default() -> Self {
        Self {
            min_bytes: 1,
            max_bytes: 1 << 20,
        }
    }
}

impl TilingSpec {
    pub fn new(tk: usize, tc: usize, th: usize, tw: usize) -> Self {
        Self { tk, tc, th, tw }
    }

    /// Tiling used when a config does not specify one.
    pub fn default_for(shape: &LayerShape) -> Self {
        Self {
            tk: shape.k.min(16),
            tc: shape.c,
            th: shape.h.min(8),
            tw: shape.w.min(8),
        }
    }

    pub fn tile_rows(&self, shape: &LayerShape) -> usize {
        shape.h.div_ceil(self.th)
    }

    pub fn tile_cols(&self, shape: &LayerShape) -> usize {
        shape.w.div_ceil(self.tw)
    }

    pub fn channel_groups(&self, shape: &LayerShape) -> usize {
        shape.c.div_ceil(self.tc)
    }

    pub fn k_groups(&self, shape: &LayerShape) -> usize {
        shape.k.div_ceil(self.tk)
    }

    pub fn tile_bytes(&self, shape: &LayerShape) -> usize {
        self.th * self.tw * self.tc * shape.bytes_per_elem
    }

    pub fn validate(&self, shape: &LayerShape, band: TileBand) -> Result<(), ModelError> {
        let checks = [
            ("tk", self.tk, shape.k),
            ("tc", self.tc, shape.c),
            ("th", self.th, shape.h),
            ("tw", self.tw, shape.w),
        ];
        for (name, t, dim) in checks {
            if t == 0 || t > dim {
                return Err(ModelError::Tiling(format!("{name}={t} outside 1..={dim}")));
            }
        }
        let bytes = self.tile_bytes(shape);
        if bytes < band.min_bytes || bytes > band.max_bytes {
            return Err(ModelError::Tiling(format!(
                "tile of {bytes} B outside band {}..={}",
                band.min_bytes, band.max_bytes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub shape: LayerShape,
    pub tiling: TilingSpec,
    /// Target fraction of exactly-zero weights.
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkConfig", into = "NetworkConfig")]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub skips: Vec<(usize, usize)>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Network("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.shape
                .validate()
                .map_err(|e| ModelError::Network(format!("layer {i}: {e}")))?;
            l.tiling
                .validate(&l.shape, TileBand::default())
                .map_err(|e| ModelError::Network(format!("layer {i}: {e}")))?;
            if !(0.0..1.0).contains(&l.sparsity) {
                return Err(ModelError::Network(format!(
                    "layer {i}: sparsity {} outside [0,1)",
                    l.sparsity
                )));
            }
        }
        for pair in self.layers.windows(2) {
            let (a, b) = (&pair[0].shape, &pair[1].shape);
            if b.c != a.k || b.h != a.out_rows() || b.w != a.out_cols() {
                return Err(ModelError::Network(format!(
                    "layer output {}x{}x{} does not feed next input {}x{}x{}",
                    a.k,
                    a.out_rows(),
                    a.out_cols(),
                    b.c,
                    b.h,
                    b.w
                )));
            }
        }
        for &(src, dst) in &self.skips {
            if src >= dst || dst >= self.layers.len() {
                return Err(ModelError::Network(format!("bad skip ({src}, {dst})")));
            }
        }
        Ok(())
    }

    /// Keeps the first `n` layers and the skips that stay inside them.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.layers.len());
        Self {
            name: format!("{}[..{n}]", self.name),
            layers: self.layers[..n].to_vec(),
            skips: self.skips.iter().copied().filter(|&(_, d)| d < n).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    /// Shape of the network output as `(channels, rows, cols)`.
    pub fn output_dims(&self) -> (usize, usize, usize) {
        let last = &self.layers.last().expect("validated network").shape;
        (last.k, last.out_rows(), last.out_cols())
    }
}

/// Flat on-disk form of a layer; tiling and element width are optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerConfig {
    k: usize,
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    s: usize,
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    pad: usize,
    #[serde(default = "one")]
    pool: usize,
    #[serde(default)]
    sparsity: f64,
    #[serde(default = "one")]
    bytes_per_elem: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tk: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    th: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tw: Option<usize>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkConfig {
    #[serde(default)]
    name: String,
    layers: Vec<LayerConfig>,
    #[serde(default)]
    skips: Vec<(usize, usize)>,
}

impl TryFrom<NetworkConfig> for NetworkSpec {
    type Error = ModelError;

    fn try_from(cfg: NetworkConfig) -> Result<Self, Self::Error> {
        let layers = cfg
            .layers
            .into_iter()
            .map(|l| {
                let shape = LayerShape {
                    k: l.k,
                    c: l.c,
                    h: l.h,
                    w: l.w,
                    r: l.r,
                    s: l.s,
                    stride: l.stride,
                    pad: l.pad,
                    pool: l.pool,
                    bytes_per_elem: l.bytes_per_elem,
                };
                let d = TilingSpec::default_for(&shape);
                LayerSpec {
                    shape,
                    tiling: TilingSpec {
                        tk: l.tk.unwrap_or(d.tk),
                        tc: l.tc.unwrap_or(d.tc),
                        th: l.th.unwrap_or(d.th),
                        tw: l.tw.unwrap_or(d.tw),
                    },
                    sparsity: l.sparsity,
                }
            })
            .collect();
        let spec = NetworkSpec {
            name: cfg.name,
            layers,
            skips: cfg.skips,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<NetworkSpec> for NetworkConfig {
    fn from(spec: NetworkSpec) -> Self {
        NetworkConfig {
            name: spec.name,
            layers: spec
                .layers
                .into_iter()
                .map(|l| LayerConfig {
                    k: l.shape.k,
                    c: l.shape.c,
                    h: l.shape.h,
                    w: l.shape.w,
                    r: l.shape.r,
                    s: l.shape.s,
                    stride: l.shape.stride,
                    pad: l.shape.pad,
                    pool: l.shape.pool,
                    sparsity: l.sparsity,
                    bytes_per_elem: l.shape.bytes_per_elem,
                    tk: Some(l.tiling.tk),
                    tc: Some(l.tiling.tc),
                    th: Some(l.tiling.th),
                    tw: Some(l.tiling.tw),
                })
                .collect(),
            skips: spec.skips,
        }
    }
}
