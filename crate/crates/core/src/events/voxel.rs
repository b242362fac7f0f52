use super::EventStream;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Guard for the standard deviation in [`znorm`].
pub const ZNORM_EPS: f64 = 1e-8;

/// `bins x height x width` event accumulation over `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub t_start: u64,
    pub t_end: u64,
    /// Downsampling factor relative to the sensor resolution.
    pub scale: usize,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize, t_start: u64, t_end: u64) -> Self {
        Self {
            bins,
            height,
            width,
            data: vec![0.0; bins * height * width],
            t_start,
            t_end,
            scale: 1,
        }
    }

    pub fn at(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.bins, self.height, self.width], self.data.clone()).expect("voxel shape")
    }

    pub fn hflip(&self) -> VoxelGrid {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        out
    }
}

/// Triangular-kernel voxelization: every event adds
/// `p * max(0, 1 - |b - (t - t_start) / (t_end - t_start) * (B - 1)|)` to bin `b`
/// at its pixel. Events at `t_end` land on bin `B - 1`.
pub fn voxelize(stream: &EventStream, bins: usize, t_start: u64, t_end: u64) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::InvalidArgument("voxelize needs at least one bin".into()));
    }
    if t_end <= t_start {
        return Err(Error::InvalidArgument(format!(
            "empty window: t_end {t_end} <= t_start {t_start}"
        )));
    }
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let mut grid = VoxelGrid::zeros(bins, h, w, t_start, t_end);
    let span = (t_end - t_start) as f64;
    let last = (bins - 1) as f64;
    for (index, e) in stream.events().iter().enumerate() {
        if e.t < t_start || e.t > t_end {
            return Err(Error::EventRecord {
                index,
                reason: format!("timestamp {} outside window [{t_start}, {t_end}]", e.t),
            });
        }
        let tn = (e.t - t_start) as f64 / span * last;
        let b0 = tn.floor();
        let frac = tn - b0;
        let b0 = b0 as usize;
        let pix = e.y as usize * w + e.x as usize;
        let p = e.p as f64;
        grid.data[b0 * h * w + pix] += p * (1.0 - frac);
        if b0 + 1 < bins && frac > 0.0 {
            grid.data[(b0 + 1) * h * w + pix] += p * frac;
        }
    }
    Ok(grid)
}

/// Z-score over all entries (population standard deviation, guarded by
/// [`ZNORM_EPS`]).
pub fn znorm(v: &VoxelGrid) -> VoxelGrid {
    let mut out = v.clone();
    let first = v.data[0];
    if v.data.iter().all(|&x| x == first) {
        out.data.fill(0.0);
        return out;
    }
    let n = v.data.len() as f64;
    let mean0 = v.data.iter().sum::<f64>() / n;
    let mean = mean0 + v.data.iter().map(|x| x - mean0).sum::<f64>() / n;
    let var = v.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ZNORM_EPS);
    for x in &mut out.data {
        *x = (*x - mean) / std;
    }
    out
}

/// Per-bin average pooling with kernel = stride = `factor`.
pub fn downsample_voxel(v: &VoxelGrid, factor: usize) -> Result<VoxelGrid> {
    if factor == 0 || v.height % factor != 0 || v.width % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "factor {factor} does not divide {}x{}",
            v.height, v.width
        )));
    }
    let (ho, wo) = (v.height / factor, v.width / factor);
    let area = (factor * factor) as f64;
    let mut data = vec![0.0; v.bins * ho * wo];
    for b in 0..v.bins {
        for y in 0..ho {
            for x in 0..wo {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += v.at(b, y * factor + dy, x * factor + dx);
                    }
                }
                data[(b * ho + y) * wo + x] = acc / area;
            }
        }
    }
    Ok(VoxelGrid {
        bins: v.bins,
        height: ho,
        width: wo,
        data,
        t_start: v.t_start,
        t_end: v.t_end,
        scale: v.scale * factor,
    })
}

/// Sparse anchor locations: pixels whose voxel column has any non-zero mass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferencePointSet {
    /// `(y, x)` in row-major order.
    pub points: Vec<(usize, usize)>,
    pub height: usize,
    pub width: usize,
    pub scale: usize,
}

impl ReferencePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `(y, x)` is a reference point iff `sum_b |V(b)[y, x]| > 0`.
pub fn extract_reference_points(v: &VoxelGrid) -> ReferencePointSet {
    let plane = v.height * v.width;
    let points = (0..plane)
        .filter(|&i| (0..v.bins).map(|b| v.data[b * plane + i].abs()).sum::<f64>() > 0.0)
        .map(|i| (i / v.width, i % v.width))
        .collect();
    ReferencePointSet {
        points,
        height: v.height,
        width: v.width,
        scale: v.scale,
    }
}
