//! Unfolding image batches into the patch matrix consumed by the first layer.
//!
//! A patch matrix has one row per pixel of the receptive field
//! (`c·kh·kw`, ordered channel, kernel row, kernel column) and one column per
//! output position (ordered example, output row, output column). Its column
//! count is the effective batch used by the gram average.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Images in batch, channel, row, column order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl ImageBatch {
    pub fn new(b: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if b == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Geometry(format!(
                "image batch dims must be positive, got {b}x{c}x{h}x{w}"
            )));
        }
        if data.len() != b * c * h * w {
            return Err(Error::Shape(format!(
                "image batch {b}x{c}x{h}x{w} needs {} values, got {}",
                b * c * h * w,
                data.len()
            )));
        }
        Ok(ImageBatch { b, c, h, w, data })
    }

    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        ImageBatch {
            b,
            c,
            h,
            w,
            data: vec![0.0; b * c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, bi: usize, ci: usize, y: usize, x: usize) -> f64 {
        self.data[((bi * self.c + ci) * self.h + y) * self.w + x]
    }

    pub fn per_example(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.b, self.c, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom {
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
            ph: pad,
            pw: pad,
        }
    }

    /// Output spatial dims for an `h×w` input, or a geometry error when the
    /// kernel does not tile the padded input exactly.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kh == 0 || self.kw == 0 || self.sh == 0 || self.sw == 0 {
            return Err(Error::Geometry(format!(
                "kernel and stride must be positive: {self:?}"
            )));
        }
        let span_h = h + 2 * self.ph;
        let span_w = w + 2 * self.pw;
        if span_h < self.kh || span_w < self.kw {
            return Err(Error::Geometry(format!(
                "kernel {}x{} larger than padded input {span_h}x{span_w}",
                self.kh, self.kw
            )));
        }
        if (span_h - self.kh) % self.sh != 0 || (span_w - self.kw) % self.sw != 0 {
            return Err(Error::Geometry(format!(
                "stride {}x{} does not tile padded input {span_h}x{span_w} with kernel {}x{}",
                self.sh, self.sw, self.kh, self.kw
            )));
        }
        Ok(((span_h - self.kh) / self.sh + 1, (span_w - self.kw) / self.sw + 1))
    }

    pub fn patch_len(&self, channels: usize) -> usize {
        channels * self.kh * self.kw
    }
}

#[derive(Clone, Debug)]
pub struct PatchMatrix {
    pub data: Mat,
    pub geom: ConvGeom,
    /// Source batch dims `(b, c, h, w)`.
    pub src_dims: (usize, usize, usize, usize),
    /// Output positions per example (`oh·ow`).
    pub positions: usize,
}

impl PatchMatrix {
    /// Rows: pixels per receptive field.
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    /// Columns: effective batch.
    pub fn effective_batch(&self) -> usize {
        self.data.cols()
    }

    /// Wraps an arbitrary `n×B` matrix as a single-position patch matrix.
    pub fn from_columns(data: Mat) -> Self {
        let (n, b) = data.shape();
        PatchMatrix {
            geom: ConvGeom::square(1, 1, 0),
            src_dims: (b, n, 1, 1),
            positions: 1,
            data,
        }
    }

    pub fn with_data(&self, data: Mat) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::Shape(format!(
                "replacement patch data {:?} vs {:?}",
                data.shape(),
                self.data.shape()
            )));
        }
        Ok(PatchMatrix {
            data,
            ..self.clone()
        })
    }
}

pub fn im2col(img: &ImageBatch, g: ConvGeom) -> Result<PatchMatrix> {
    let (oh, ow) = g.output_dims(img.h, img.w)?;
    let n = g.patch_len(img.c);
    let cols = img.b * oh * ow;
    let mut out = Mat::zeros(n, cols);
    let data = out.data_mut();
    for ci in 0..img.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (ci * g.kh + ki) * g.kw + kj;
                let row = &mut data[r * cols..(r + 1) * cols];
                for bi in 0..img.b {
                    let plane = &img.data[(bi * img.c + ci) * img.h * img.w..][..img.h * img.w];
                    for oy in 0..oh {
                        let y = (oy * g.sh + ki) as isize - g.ph as isize;
                        let base = (bi * oh + oy) * ow;
                        if y < 0 || y >= img.h as isize {
                            continue;
                        }
                        let src_row = &plane[y as usize * img.w..(y as usize + 1) * img.w];
                        for ox in 0..ow {
                            let x = (ox * g.sw + kj) as isize - g.pw as isize;
                            if x >= 0 && x < img.w as isize {
                                row[base + ox] = src_row[x as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(PatchMatrix {
        data: out,
        geom: g,
        src_dims: img.dims(),
        positions: oh * ow,
    })
}

/// Non-overlapping `p×p` patches, as used by patch-embedding layers.
pub fn patchify(img: &ImageBatch, p: usize) -> Result<PatchMatrix> {
    if p == 0 || img.h % p != 0 || img.w % p != 0 {
        return Err(Error::Geometry(format!(
            "patch size {p} does not divide image {}x{}",
            img.h, img.w
        )));
    }
    im2col(img, ConvGeom::square(p, p, 0))
}

/// One column per example holding the flattened `c·h·w` image.
pub fn flatten_dense(img: &ImageBatch) -> PatchMatrix {
    let n = img.per_example();
    let mut out = Mat::zeros(n, img.b);
    for bi in 0..img.b {
        let ex = &img.data[bi * n..(bi + 1) * n];
        for (r, v) in ex.iter().enumerate() {
            out.set(r, bi, *v);
        }
    }
    PatchMatrix {
        data: out,
        geom: ConvGeom {
            kh: img.h,
            kw: img.w,
            sh: 1,
            sw: 1,
            ph: 0,
            pw: 0,
        },
        src_dims: img.dims(),
        positions: 1,
    }
}
