//! Frames, flow images and saliency maps on disk.
//!
//! Netpbm files go through the `image` crate; `.gstn` files hold raw tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::metrics::SaliencyMap;
use crate::tensor::kernels::bilinear_forward;
use crate::tensor::{read_gstn, write_gstn, Tensor};

fn is_gstn(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gstn"))
}

/// Reads a GSTN tensor file.
pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_gstn(BufReader::new(file)).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => Error::format(path, None, e.to_string()),
        _ => Error::io(path, e),
    })
}

pub fn write_tensor(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_gstn(&mut w, tensor).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::format(path, None, e.to_string()))
}

/// Reads an RGB image as `[3,H,W]` in [0,1]. Grayscale files are replicated
/// across channels. A GSTN file may hold a `[3,H,W]` image in [0,1] or a raw
/// `[2,H,W]` flow field, which is rendered with [`render_flow`].
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    if is_gstn(path) {
        let t = read_tensor(path)?;
        return match t.shape() {
            [3, _, _] => {
                if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::format(path, None, "image values outside [0,1]"));
                }
                Ok(t)
            }
            [2, _, _] => render_flow(&t),
            s => Err(Error::format(path, None, format!("expected [3,H,W] or [2,H,W], found {s:?}"))),
        };
    }
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let gray = img.to_luma32f().into_raw();
            gray.iter().chain(&gray).chain(&gray).copied().collect()
        }
        _ => {
            let rgb = img.to_rgb32f().into_raw();
            let mut planar = vec![0.0f32; 3 * h * w];
            for (i, px) in rgb.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    planar[c * h * w + i] = px[c];
                }
            }
            planar
        }
    };
    Tensor::new(vec![3, h, w], data)
}

/// `(width, height)` of an image file without decoding pixel data where the
/// format allows it.
pub fn image_size(path: &Path) -> Result<(usize, usize)> {
    if is_gstn(path) {
        let t = read_tensor(path)?;
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::format(path, None, format!("expected an image tensor, found {s:?}")));
        }
        return Ok((s[s.len() - 1], s[s.len() - 2]));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| Error::format(path, None, e.to_string()))?;
    Ok((w as usize, h as usize))
}

/// Maps a raw `[2,H,W]` flow field to a three-channel image:
/// `(0.5 + u / (2 m), 0.5 + v / (2 m), |(u,v)| / M)` where `m` is the largest
/// absolute component and `M` the largest magnitude. A zero field renders as
/// `(0.5, 0.5, 0)`.
pub fn render_flow(raw: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [2, h, w] = *raw.shape() else {
        return Err(Error::shape("render_flow", format!("expected [2,H,W], found {:?}", raw.shape())));
    };
    if !raw.all_finite() {
        return Err(Error::contract("render_flow", "flow contains non-finite values"));
    }
    let n = h * w;
    let (u, v) = raw.data().split_at(n);
    let m = raw.max_abs() as f64;
    let mag: Vec<f64> = u.iter().zip(v).map(|(&a, &b)| (a as f64).hypot(b as f64)).collect();
    let mag_max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(3 * n);
    let centered = |x: f32| if m > 0.0 { 0.5 + x as f64 / (2.0 * m) } else { 0.5 };
    out.extend(u.iter().map(|&x| centered(x) as f32));
    out.extend(v.iter().map(|&x| centered(x) as f32));
    out.extend(mag.iter().map(|&x| if mag_max > 0.0 { (x / mag_max) as f32 } else { 0.0 }));
    Tensor::new(vec![3, h, w], out)
}

/// Reads a single-channel map: PGM (8 or 16 bit, scaled by the maximum
/// sample value) or a GSTN tensor of shape `[H,W]`, `[1,H,W]` or `[1,1,H,W]`.
pub fn read_map(path: &Path) -> Result<SaliencyMap> {
    if is_gstn(path) {
        let t = read_tensor(path)?;
        let (h, w) = match t.shape() {
            [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
            s => return Err(Error::format(path, None, format!("expected a single-channel map, found {s:?}"))),
        };
        return SaliencyMap::new(h, w, t.data().iter().map(|&v| v as f64).collect());
    }
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(Error::format(
                path,
                None,
                format!("expected a grayscale map, found {:?}", other.color()),
            ))
        }
    };
    SaliencyMap::new(h, w, data)
}

/// Writes an 8-bit binary PGM; values are clamped to [0,1].
pub fn write_pgm(path: &Path, map: &SaliencyMap) -> Result<()> {
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&bytes, map.width() as u32, map.height() as u32, ExtendedColorType::L8)
        .map_err(|e| Error::format(path, None, e.to_string()))
}

/// Writes a map as a `[H,W]` GSTN tensor.
pub fn write_map_gstn(path: &Path, map: &SaliencyMap) -> Result<()> {
    let t = Tensor::new(
        vec![map.height(), map.width()],
        map.data().iter().map(|&v| v as f32).collect(),
    )?;
    write_tensor(path, &t)
}

/// Writes a `[3,H,W]` image in [0,1] as an 8-bit binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let [3, h, w] = *image.shape() else {
        return Err(Error::shape("write_ppm", format!("expected [3,H,W], found {:?}", image.shape())));
    };
    let d = image.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            bytes.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::format(path, None, e.to_string()))
}

/// Half-pixel bilinear resize of a `[C,H,W]` tensor. Returns the input
/// unchanged when the size already matches.
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape("resize_bilinear", format!("expected [C,H,W], found {:?}", image.shape())));
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape("resize_bilinear", "zero extent"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    Tensor::new(vec![c, out_h, out_w], bilinear_forward(image.data(), c, h, w, out_h, out_w))
}
