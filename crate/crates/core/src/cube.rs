//! In-memory hyperspectral tensors and label maps.
//!
//! All tensors are dense, row-major `B × C × H × W` (batch, channel, row, column).

use crate::error::{Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CubeDims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl CubeDims {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> usize {
        self.batch * self.pixels_per_image()
    }

    pub fn len(&self) -> usize {
        self.pixels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.channels + c) * self.height + h) * self.width + w
    }

    /// Offset of plane `(b, c)`.
    pub fn plane(&self, b: usize, c: usize) -> usize {
        (b * self.channels + c) * self.pixels_per_image()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    dims: CubeDims,
    wavelengths_nm: Vec<f64>,
    data: Vec<f64>,
}

impl Hypercube {
    pub fn new(dims: CubeDims, wavelengths_nm: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if dims.batch == 0 || dims.channels == 0 || dims.height == 0 || dims.width == 0 {
            return Err(Error::dim(format!("hypercube dims must be nonzero, got {dims:?}")));
        }
        if wavelengths_nm.len() != dims.channels {
            return Err(Error::dim(format!(
                "{} wavelengths for {} channels",
                wavelengths_nm.len(),
                dims.channels
            )));
        }
        if let Some(i) = wavelengths_nm.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::data(format!(
                "wavelengths must be strictly increasing (channel {} -> {})",
                i,
                i + 1
            )));
        }
        if wavelengths_nm.iter().any(|w| !w.is_finite()) {
            return Err(Error::data("non-finite wavelength"));
        }
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "data has {} values, dims {:?} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite reflectance at flat index {i}")));
        }
        Ok(Self {
            dims,
            wavelengths_nm,
            data,
        })
    }

    pub fn dims(&self) -> CubeDims {
        self.dims
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.dims.index(b, c, h, w)]
    }

    /// Spectrum of pixel `i` of image `b` (`i = h·W + w`).
    pub fn spectrum(&self, b: usize, pixel: usize) -> Vec<f64> {
        (0..self.dims.channels)
            .map(|c| self.data[self.dims.plane(b, c) + pixel])
            .collect()
    }

    /// Copy of the images `batch_indices`, in that order.
    pub fn select(&self, batch_indices: &[usize]) -> Result<Hypercube> {
        let plane = self.dims.channels * self.dims.pixels_per_image();
        let mut data = Vec::with_capacity(batch_indices.len() * plane);
        for &b in batch_indices {
            if b >= self.dims.batch {
                return Err(Error::dim(format!("image {b} out of {}", self.dims.batch)));
            }
            data.extend_from_slice(&self.data[b * plane..(b + 1) * plane]);
        }
        Hypercube::new(
            CubeDims {
                batch: batch_indices.len(),
                ..self.dims
            },
            self.wavelengths_nm.clone(),
            data,
        )
    }

    /// Stack cubes along the batch axis.
    pub fn concat(cubes: &[&Hypercube]) -> Result<Hypercube> {
        let first = cubes.first().ok_or_else(|| Error::dim("cannot concatenate zero cubes"))?;
        let mut data = Vec::new();
        let mut batch = 0;
        for cube in cubes {
            let d = cube.dims;
            if (d.channels, d.height, d.width) != (first.dims.channels, first.dims.height, first.dims.width)
                || cube.wavelengths_nm != first.wavelengths_nm
            {
                return Err(Error::dim("cubes differ in channels, spatial size or wavelengths"));
            }
            batch += d.batch;
            data.extend_from_slice(&cube.data);
        }
        Hypercube::new(
            CubeDims {
                batch,
                ..first.dims
            },
            first.wavelengths_nm.clone(),
            data,
        )
    }
}

/// `B × F × H × W` output of a spectral reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCube {
    dims: CubeDims,
    data: Vec<f64>,
}

impl ReducedCube {
    /// `source_channels` is the channel count of the cube the reduction was
    /// computed from; a reduction never has more outputs than inputs.
    pub fn new(dims: CubeDims, data: Vec<f64>, source_channels: usize) -> Result<Self> {
        if dims.channels > source_channels {
            return Err(Error::dim(format!(
                "reduction to {} channels from {source_channels} is not a reduction",
                dims.channels
            )));
        }
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "reduced data has {} values, dims {:?} need {}",
                data.len(),
                dims,
                dims.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// `(B, F, H, W)` with `channels = F`.
    pub fn dims(&self) -> CubeDims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, b: usize, f: usize, h: usize, w: usize) -> f64 {
        self.data[self.dims.index(b, f, h, w)]
    }

    pub fn select(&self, batch_indices: &[usize]) -> Result<ReducedCube> {
        let plane = self.dims.channels * self.dims.pixels_per_image();
        let mut data = Vec::with_capacity(batch_indices.len() * plane);
        for &b in batch_indices {
            if b >= self.dims.batch {
                return Err(Error::dim(format!("image {b} out of {}", self.dims.batch)));
            }
            data.extend_from_slice(&self.data[b * plane..(b + 1) * plane]);
        }
        Ok(ReducedCube {
            dims: CubeDims {
                batch: batch_indices.len(),
                ..self.dims
            },
            data,
        })
    }
}

/// Per-pixel class labels for a batch of images, `B × H × W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    batch: usize,
    height: usize,
    width: usize,
    num_classes: u16,
    ignore: u16,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(
        batch: usize,
        height: usize,
        width: usize,
        num_classes: u16,
        ignore: u16,
        data: Vec<u16>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::config("label map needs at least one class"));
        }
        if ignore < num_classes {
            return Err(Error::config(format!(
                "ignore value {ignore} collides with class ids 0..{num_classes}"
            )));
        }
        if data.len() != batch * height * width {
            return Err(Error::dim(format!(
                "label map has {} entries, expected {batch}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&l| l >= num_classes && l != ignore) {
            return Err(Error::data(format!(
                "label {} at flat index {i} is outside 0..{num_classes}",
                data[i]
            )));
        }
        Ok(Self {
            batch,
            height,
            width,
            num_classes,
            ignore,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes as usize
    }

    pub fn ignore(&self) -> u16 {
        self.ignore
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn image(&self, b: usize) -> &[u16] {
        let n = self.height * self.width;
        &self.data[b * n..(b + 1) * n]
    }

    /// Pixel counts per class over the whole map, ignoring `ignore`.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.num_classes()];
        for &l in &self.data {
            if l != self.ignore {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    pub fn select(&self, batch_indices: &[usize]) -> Result<LabelMap> {
        let mut data = Vec::with_capacity(batch_indices.len() * self.height * self.width);
        for &b in batch_indices {
            if b >= self.batch {
                return Err(Error::dim(format!("image {b} out of {}", self.batch)));
            }
            data.extend_from_slice(self.image(b));
        }
        LabelMap::new(
            batch_indices.len(),
            self.height,
            self.width,
            self.num_classes,
            self.ignore,
            data,
        )
    }

    pub fn concat(maps: &[&LabelMap]) -> Result<LabelMap> {
        let first = maps.first().ok_or_else(|| Error::dim("cannot concatenate zero label maps"))?;
        let mut data = Vec::new();
        let mut batch = 0;
        for m in maps {
            if (m.height, m.width, m.num_classes, m.ignore)
                != (first.height, first.width, first.num_classes, first.ignore)
            {
                return Err(Error::dim("label maps differ in size, class count or ignore value"));
            }
            batch += m.batch;
            data.extend_from_slice(&m.data);
        }
        LabelMap::new(batch, first.height, first.width, first.num_classes, first.ignore, data)
    }
}

/// A hypercube with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCube {
    pub cube: Hypercube,
    pub labels: LabelMap,
}

impl LabeledCube {
    pub fn new(cube: Hypercube, labels: LabelMap) -> Result<Self> {
        let d = cube.dims();
        if (d.batch, d.height, d.width) != (labels.batch, labels.height, labels.width) {
            return Err(Error::dim(format!(
                "cube is {}x{}x{} but labels are {}x{}x{}",
                d.batch, d.height, d.width, labels.batch, labels.height, labels.width
            )));
        }
        Ok(Self { cube, labels })
    }

    pub fn num_images(&self) -> usize {
        self.cube.dims().batch
    }

    pub fn select(&self, batch_indices: &[usize]) -> Result<LabeledCube> {
        LabeledCube::new(self.cube.select(batch_indices)?, self.labels.select(batch_indices)?)
    }

    pub fn concat(parts: &[&LabeledCube]) -> Result<LabeledCube> {
        let cubes: Vec<_> = parts.iter().map(|p| &p.cube).collect();
        let labels: Vec<_> = parts.iter().map(|p| &p.labels).collect();
        LabeledCube::new(Hypercube::concat(&cubes)?, LabelMap::concat(&labels)?)
    }
}
